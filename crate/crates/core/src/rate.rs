//! Rate model and bookkeeping shared by both optimizers.
//!
//! Given binary associations and continuous power/bandwidth allocations,
//! this module evaluates achieved uplink SINRs and per-slot data volumes on
//! both tiers, verifies every constraint family of the scheduling problem,
//! and tracks the per-user demand that remains to be drained.

use ndarray::{Array2, Array3, Array4};

use crate::config::RunConfig;
use crate::scenario::Scenario;

/// Relative tolerance applied when checking that access traffic fits the
/// backhaul capacity of its BS; all other continuous families only get a
/// float-roundoff allowance.
pub const BACKHAUL_FIT_REL_TOL: f64 = 1e-6;

/// Float-roundoff allowance for budget sums that are exact by construction.
pub const ROUNDOFF_REL_TOL: f64 = 1e-12;

/// Binary association variables for a whole run (slot-major, slot t in row
/// t-1).
#[derive(Debug, Clone)]
pub struct Association {
    /// alpha(t, n, k, s) = 1 iff user k transmits to BS n on sub-channel s.
    pub ue_sc: Array4<u8>,
    /// mu(t, m, n) = 1 iff BS n backhauls through satellite m.
    pub bs_leo: Array3<u8>,
}

impl Association {
    pub fn zeros(cfg: &RunConfig) -> Self {
        Self {
            ue_sc: Array4::zeros((cfg.max_ts, cfg.num_bs, cfg.num_ue, cfg.num_sc)),
            bs_leo: Array3::zeros((cfg.max_ts, cfg.num_leo, cfg.num_bs)),
        }
    }
}

/// Continuous allocation variables for a whole run (slot-major).
#[derive(Debug, Clone)]
pub struct Allocation {
    /// Uplink transmit power of user k towards BS n on sub-channel s, watts.
    pub ue_power_w: Array4<f64>,
    /// Backhaul transmit power of BS n, watts.
    pub bs_power_w: Array2<f64>,
    /// Backhaul bandwidth granted to BS n by satellite m, Hz.
    pub bandwidth_hz: Array3<f64>,
}

impl Allocation {
    pub fn zeros(cfg: &RunConfig) -> Self {
        Self {
            ue_power_w: Array4::zeros((cfg.max_ts, cfg.num_bs, cfg.num_ue, cfg.num_sc)),
            bs_power_w: Array2::zeros((cfg.max_ts, cfg.num_bs)),
            bandwidth_hz: Array3::zeros((cfg.max_ts, cfg.num_leo, cfg.num_bs)),
        }
    }
}

/// Uplink SINR of user k towards BS n on sub-channel s in slot t (1-based).
///
/// The interference term collects the transmit power of every other user
/// on the same sub-channel — regardless of which BS that user aims at —
/// weighted by its gain towards the receiving BS n.
pub fn sinr_ue(
    scn: &Scenario,
    assoc: &Association,
    alloc: &Allocation,
    t: usize,
    n: usize,
    k: usize,
    s: usize,
) -> f64 {
    let row = t - 1;
    let cfg = &scn.cfg;
    let h = &scn.channels.access_gain;
    let num = assoc.ue_sc[[row, n, k, s]] as f64
        * alloc.ue_power_w[[row, n, k, s]]
        * h[[row, n, k, s]];
    if num == 0.0 {
        return 0.0;
    }
    let mut interference = 0.0;
    for j in 0..cfg.num_ue {
        if j == k {
            continue;
        }
        let mut tx_j = 0.0;
        for i in 0..cfg.num_bs {
            tx_j += assoc.ue_sc[[row, i, j, s]] as f64 * alloc.ue_power_w[[row, i, j, s]];
        }
        interference += h[[row, n, j, s]] * tx_j;
    }
    num / (interference + scn.channels.noise_per_sc_w)
}

/// Bits delivered by user k to BS n on sub-channel s in slot t.
pub fn data_ue_sc(
    scn: &Scenario,
    assoc: &Association,
    alloc: &Allocation,
    t: usize,
    n: usize,
    k: usize,
    s: usize,
) -> f64 {
    let sinr = sinr_ue(scn, assoc, alloc, t, n, k, s);
    if sinr == 0.0 {
        return 0.0;
    }
    scn.cfg.ts_duration_s * scn.cfg.sc_bandwidth_hz * (1.0 + sinr).log2()
}

/// Total access bits of user k in slot t, summed over BSs and sub-channels.
pub fn data_ue_total(scn: &Scenario, assoc: &Association, alloc: &Allocation, t: usize, k: usize) -> f64 {
    let mut total = 0.0;
    for n in 0..scn.cfg.num_bs {
        for s in 0..scn.cfg.num_sc {
            total += data_ue_sc(scn, assoc, alloc, t, n, k, s);
        }
    }
    total
}

/// Backhaul bits BS n can push through satellite m in slot t.  Exactly zero
/// when the link is not selected or has no bandwidth.
pub fn data_bs_leo(
    scn: &Scenario,
    assoc: &Association,
    alloc: &Allocation,
    t: usize,
    m: usize,
    n: usize,
) -> f64 {
    let row = t - 1;
    if assoc.bs_leo[[row, m, n]] == 0 {
        return 0.0;
    }
    let w = alloc.bandwidth_hz[[row, m, n]];
    if w <= 0.0 {
        return 0.0;
    }
    let g = scn.channels.backhaul_gain[[row, m, n]];
    let p = alloc.bs_power_w[[row, n]];
    let snr = p * g / (w * scn.channels.noise_density_w_hz);
    scn.cfg.ts_duration_s * w * (1.0 + snr).log2()
}

/// Total backhaul bits available to BS n in slot t, summed over satellites.
pub fn data_bs_total(scn: &Scenario, assoc: &Association, alloc: &Allocation, t: usize, n: usize) -> f64 {
    (0..scn.cfg.num_leo)
        .map(|m| data_bs_leo(scn, assoc, alloc, t, m, n))
        .sum()
}

/// Outcome of one constraint-family check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyCheck {
    pub ok: bool,
    /// Worst violation in the family's natural unit (count, W, Hz or
    /// bits); 0.0 when satisfied everywhere.
    pub worst: f64,
}

impl FamilyCheck {
    fn pass() -> Self {
        Self {
            ok: true,
            worst: 0.0,
        }
    }
}

/// Per-family feasibility verdict for one slot.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    /// Each (BS, sub-channel) pair serves at most one user.
    pub sc_exclusive: FamilyCheck,
    /// No user occupies more than the allowed number of sub-channels.
    pub ue_sc_budget: FamilyCheck,
    /// Each user talks to at most one BS.
    pub ue_single_bs: FamilyCheck,
    /// Each BS backhauls through at most one satellite.
    pub bs_single_leo: FamilyCheck,
    /// Bandwidth granted by each satellite stays within its band.
    pub leo_band_budget: FamilyCheck,
    /// Access traffic entering each BS fits its backhaul capacity
    /// (relative tolerance [`BACKHAUL_FIT_REL_TOL`]).
    pub backhaul_fit: FamilyCheck,
    /// Per-user transmit power budget.
    pub ue_power_budget: FamilyCheck,
    /// Per-BS backhaul power budget.
    pub bs_power_budget: FamilyCheck,
}

impl FeasibilityReport {
    pub fn all_ok(&self) -> bool {
        self.families().iter().all(|(_, f)| f.ok)
    }

    /// Worst violation across all families (in mixed natural units; meant
    /// for logging, not thresholding).
    pub fn worst_violation(&self) -> f64 {
        self.families()
            .iter()
            .map(|(_, f)| f.worst)
            .fold(0.0, f64::max)
    }

    pub fn families(&self) -> [(&'static str, FamilyCheck); 8] {
        [
            ("sc_exclusive", self.sc_exclusive),
            ("ue_sc_budget", self.ue_sc_budget),
            ("ue_single_bs", self.ue_single_bs),
            ("bs_single_leo", self.bs_single_leo),
            ("leo_band_budget", self.leo_band_budget),
            ("backhaul_fit", self.backhaul_fit),
            ("ue_power_budget", self.ue_power_budget),
            ("bs_power_budget", self.bs_power_budget),
        ]
    }
}

/// Check every constraint family for slot `t` (1-based).
///
/// When `delivered_bits` is given (one entry per user, as produced by the
/// schedulers after any backhaul throttling) the backhaul-fit family
/// compares those bits against backhaul capacity; otherwise it uses the raw
/// access rates implied by the allocation.
pub fn check_feasibility(
    scn: &Scenario,
    assoc: &Association,
    alloc: &Allocation,
    t: usize,
    delivered_bits: Option<&[f64]>,
) -> FeasibilityReport {
    let cfg = &scn.cfg;
    let row = t - 1;

    let mut sc_exclusive = FamilyCheck::pass();
    for n in 0..cfg.num_bs {
        for s in 0..cfg.num_sc {
            let users: u32 = (0..cfg.num_ue)
                .map(|k| assoc.ue_sc[[row, n, k, s]] as u32)
                .sum();
            if users > 1 {
                sc_exclusive.ok = false;
                sc_exclusive.worst = sc_exclusive.worst.max((users - 1) as f64);
            }
        }
    }

    let mut ue_sc_budget = FamilyCheck::pass();
    for n in 0..cfg.num_bs {
        for k in 0..cfg.num_ue {
            let scs: u32 = (0..cfg.num_sc)
                .map(|s| assoc.ue_sc[[row, n, k, s]] as u32)
                .sum();
            if scs as usize > cfg.max_sc_per_ue {
                ue_sc_budget.ok = false;
                ue_sc_budget.worst = ue_sc_budget
                    .worst
                    .max((scs as usize - cfg.max_sc_per_ue) as f64);
            }
        }
    }

    let mut ue_single_bs = FamilyCheck::pass();
    for k in 0..cfg.num_ue {
        let bss: u32 = (0..cfg.num_bs)
            .map(|n| u32::from((0..cfg.num_sc).any(|s| assoc.ue_sc[[row, n, k, s]] != 0)))
            .sum();
        if bss > 1 {
            ue_single_bs.ok = false;
            ue_single_bs.worst = ue_single_bs.worst.max((bss - 1) as f64);
        }
    }

    let mut bs_single_leo = FamilyCheck::pass();
    for n in 0..cfg.num_bs {
        let leos: u32 = (0..cfg.num_leo)
            .map(|m| assoc.bs_leo[[row, m, n]] as u32)
            .sum();
        if leos > 1 {
            bs_single_leo.ok = false;
            bs_single_leo.worst = bs_single_leo.worst.max((leos - 1) as f64);
        }
    }

    let mut leo_band_budget = FamilyCheck::pass();
    for m in 0..cfg.num_leo {
        let granted: f64 = (0..cfg.num_bs)
            .map(|n| assoc.bs_leo[[row, m, n]] as f64 * alloc.bandwidth_hz[[row, m, n]])
            .sum();
        let excess = granted - cfg.leo_bandwidth_hz * (1.0 + ROUNDOFF_REL_TOL);
        if excess > 0.0 {
            leo_band_budget.ok = false;
            leo_band_budget.worst = leo_band_budget.worst.max(excess);
        }
    }

    let mut backhaul_fit = FamilyCheck::pass();
    for n in 0..cfg.num_bs {
        let offered: f64 = match delivered_bits {
            Some(d) => (0..cfg.num_ue)
                .filter(|&k| (0..cfg.num_sc).any(|s| assoc.ue_sc[[row, n, k, s]] != 0))
                .map(|k| d[k])
                .sum(),
            None => (0..cfg.num_ue)
                .map(|k| {
                    (0..cfg.num_sc)
                        .map(|s| data_ue_sc(scn, assoc, alloc, t, n, k, s))
                        .sum::<f64>()
                })
                .sum(),
        };
        let capacity = data_bs_total(scn, assoc, alloc, t, n);
        let slack = capacity * BACKHAUL_FIT_REL_TOL + f64::EPSILON;
        let excess = offered - capacity;
        if excess > slack {
            backhaul_fit.ok = false;
            backhaul_fit.worst = backhaul_fit.worst.max(excess);
        } else {
            backhaul_fit.worst = backhaul_fit.worst.max(excess.max(0.0));
        }
    }

    let mut ue_power_budget = FamilyCheck::pass();
    for k in 0..cfg.num_ue {
        let spent: f64 = (0..cfg.num_bs)
            .map(|n| {
                (0..cfg.num_sc)
                    .map(|s| assoc.ue_sc[[row, n, k, s]] as f64 * alloc.ue_power_w[[row, n, k, s]])
                    .sum::<f64>()
            })
            .sum();
        let excess = spent - cfg.ue_max_power_w * (1.0 + ROUNDOFF_REL_TOL);
        if excess > 0.0 {
            ue_power_budget.ok = false;
            ue_power_budget.worst = ue_power_budget.worst.max(excess);
        }
    }

    let mut bs_power_budget = FamilyCheck::pass();
    for n in 0..cfg.num_bs {
        let excess = alloc.bs_power_w[[row, n]] - cfg.bs_max_power_w * (1.0 + ROUNDOFF_REL_TOL);
        if excess > 0.0 {
            bs_power_budget.ok = false;
            bs_power_budget.worst = bs_power_budget.worst.max(excess);
        }
    }

    FeasibilityReport {
        sc_exclusive,
        ue_sc_budget,
        ue_single_bs,
        bs_single_leo,
        leo_band_budget,
        backhaul_fit,
        ue_power_budget,
        bs_power_budget,
    }
}

/// Remaining data demand per user.
#[derive(Debug, Clone)]
pub struct DemandState {
    /// Initial demand per user, bits.
    pub initial_bits: Vec<f64>,
    /// Demand still to be drained, bits.
    pub remaining_bits: Vec<f64>,
}

impl DemandState {
    /// Fresh state with every user at the configured demand.
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            initial_bits: vec![cfg.demand_bits; cfg.num_ue],
            remaining_bits: vec![cfg.demand_bits; cfg.num_ue],
        }
    }

    /// True once every user's demand is drained.
    pub fn all_met(&self) -> bool {
        self.remaining_bits.iter().all(|&d| d == 0.0)
    }

    /// Total remaining bits across users.
    pub fn total_remaining(&self) -> f64 {
        self.remaining_bits.iter().sum()
    }
}

/// Advance the demand state by one slot: remaining demand decreases by the
/// delivered bits and is clamped at zero.
pub fn update_demand(state: &DemandState, delivered_bits: &[f64]) -> DemandState {
    assert_eq!(
        delivered_bits.len(),
        state.remaining_bits.len(),
        "delivered vector must have one entry per user"
    );
    let remaining = state
        .remaining_bits
        .iter()
        .zip(delivered_bits)
        .map(|(&d, &got)| (d - got).max(0.0))
        .collect();
    DemandState {
        initial_bits: state.initial_bits.clone(),
        remaining_bits: remaining,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use proptest::prelude::*;

    /// Desk-scale scenario with the slot-1 channel entries overwritten so
    /// tests control the exact gains in play.
    fn pinned_scenario() -> Scenario {
        let mut scn = Scenario::generate(RunConfig::desk_scale(1)).unwrap();
        scn.channels.noise_per_sc_w = 1.433e-15;
        scn
    }

    #[test]
    fn sinr_zero_without_power_or_association() {
        let scn = pinned_scenario();
        let assoc = Association::zeros(&scn.cfg);
        let mut alloc = Allocation::zeros(&scn.cfg);
        assert_eq!(sinr_ue(&scn, &assoc, &alloc, 1, 0, 0, 0), 0.0);
        // power without association still yields zero
        alloc.ue_power_w[[0, 0, 0, 0]] = 0.1;
        assert_eq!(sinr_ue(&scn, &assoc, &alloc, 1, 0, 0, 0), 0.0);
        assert_eq!(data_ue_sc(&scn, &assoc, &alloc, 1, 0, 0, 0), 0.0);
    }

    #[test]
    fn single_link_sinr_and_bits() {
        let mut scn = pinned_scenario();
        scn.channels.access_gain[[0, 0, 0, 0]] = 1e-12;
        let mut assoc = Association::zeros(&scn.cfg);
        let mut alloc = Allocation::zeros(&scn.cfg);
        assoc.ue_sc[[0, 0, 0, 0]] = 1;
        alloc.ue_power_w[[0, 0, 0, 0]] = 0.1;

        // 0.1 W * 1e-12 / 1.433e-15 W
        let sinr = sinr_ue(&scn, &assoc, &alloc, 1, 0, 0, 0);
        assert!((sinr - 69.783_670_6).abs() < 1e-6, "sinr {sinr}");

        let bits = data_ue_sc(&scn, &assoc, &alloc, 1, 0, 0, 0);
        assert!((bits - 66_369.722_46).abs() < 1e-4, "bits {bits}");

        // unit SINR delivers exactly T_S * W_SC bits
        scn.channels.access_gain[[0, 0, 0, 0]] = 1.433e-14;
        alloc.ue_power_w[[0, 0, 0, 0]] = 0.1;
        let bits = data_ue_sc(&scn, &assoc, &alloc, 1, 0, 0, 0);
        assert!((bits - 10_800.0).abs() < 1e-6, "bits {bits}");
    }

    #[test]
    fn cross_bs_interference_lowers_sinr() {
        let mut scn = pinned_scenario();
        // user 0 -> BS 0, user 1 -> BS 1, both on sub-channel 2
        scn.channels.access_gain[[0, 0, 0, 2]] = 1e-12;
        scn.channels.access_gain[[0, 0, 1, 2]] = 4e-13; // user 1 heard at BS 0
        let mut assoc = Association::zeros(&scn.cfg);
        let mut alloc = Allocation::zeros(&scn.cfg);
        assoc.ue_sc[[0, 0, 0, 2]] = 1;
        alloc.ue_power_w[[0, 0, 0, 2]] = 0.1;

        let clean = sinr_ue(&scn, &assoc, &alloc, 1, 0, 0, 2);
        assoc.ue_sc[[0, 1, 1, 2]] = 1;
        alloc.ue_power_w[[0, 1, 1, 2]] = 0.2;
        let disturbed = sinr_ue(&scn, &assoc, &alloc, 1, 0, 0, 2);

        // denominator gains 0.2 W * 4e-13
        let expected = 0.1 * 1e-12 / (0.2 * 4e-13 + 1.433e-15);
        assert!(disturbed < clean);
        assert!((disturbed - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn ue_total_adds_over_bs_and_sc() {
        let mut scn = pinned_scenario();
        scn.channels.access_gain[[0, 0, 0, 0]] = 1e-12;
        scn.channels.access_gain[[0, 0, 0, 1]] = 1e-12;
        let mut assoc = Association::zeros(&scn.cfg);
        let mut alloc = Allocation::zeros(&scn.cfg);
        for s in [0, 1] {
            assoc.ue_sc[[0, 0, 0, s]] = 1;
            alloc.ue_power_w[[0, 0, 0, s]] = 0.05;
        }
        let total = data_ue_total(&scn, &assoc, &alloc, 1, 0);
        let by_hand: f64 = (0..2)
            .map(|s| data_ue_sc(&scn, &assoc, &alloc, 1, 0, 0, s))
            .sum();
        assert_eq!(total, by_hand);
        assert!(total > 0.0);
    }

    #[test]
    fn backhaul_bits_reference_point() {
        let mut scn = pinned_scenario();
        scn.channels.backhaul_gain[[0, 0, 0]] = 1e-13;
        let mut assoc = Association::zeros(&scn.cfg);
        let mut alloc = Allocation::zeros(&scn.cfg);

        // unlinked or zero-bandwidth links carry exactly zero bits
        alloc.bs_power_w[[0, 0]] = 25.0;
        alloc.bandwidth_hz[[0, 0, 0]] = 1e6;
        assert_eq!(data_bs_leo(&scn, &assoc, &alloc, 1, 0, 0), 0.0);
        assoc.bs_leo[[0, 0, 0]] = 1;
        alloc.bandwidth_hz[[0, 0, 0]] = 0.0;
        assert_eq!(data_bs_leo(&scn, &assoc, &alloc, 1, 0, 0), 0.0);

        // 14 dBW through 1 MHz at g = 1e-13 over -174 dBm/Hz noise
        alloc.bs_power_w[[0, 0]] = crate::config::dbw_to_watts(14.0);
        alloc.bandwidth_hz[[0, 0, 0]] = 1e6;
        let bits = data_bs_leo(&scn, &assoc, &alloc, 1, 0, 0);
        assert!((bits - 279_110.501_2).abs() < 1e-3, "bits {bits}");

        let total = data_bs_total(&scn, &assoc, &alloc, 1, 0);
        assert_eq!(total, bits);
    }

    #[test]
    fn feasibility_all_zero_passes() {
        let scn = pinned_scenario();
        let report = check_feasibility(
            &scn,
            &Association::zeros(&scn.cfg),
            &Allocation::zeros(&scn.cfg),
            1,
            None,
        );
        assert!(report.all_ok(), "{report:?}");
        assert_eq!(report.worst_violation(), 0.0);
    }

    #[test]
    fn feasibility_flags_each_family() {
        let scn = pinned_scenario();
        let cfg = &scn.cfg;

        // two users on the same (BS, sub-channel)
        let mut assoc = Association::zeros(cfg);
        assoc.ue_sc[[0, 0, 0, 0]] = 1;
        assoc.ue_sc[[0, 0, 1, 0]] = 1;
        let report = check_feasibility(&scn, &assoc, &Allocation::zeros(cfg), 1, None);
        assert!(!report.sc_exclusive.ok);
        assert_eq!(report.sc_exclusive.worst, 1.0);

        // one user split across two BSs
        let mut assoc = Association::zeros(cfg);
        assoc.ue_sc[[0, 0, 0, 0]] = 1;
        assoc.ue_sc[[0, 1, 0, 1]] = 1;
        let report = check_feasibility(&scn, &assoc, &Allocation::zeros(cfg), 1, None);
        assert!(!report.ue_single_bs.ok);

        // BS linked to both satellites
        let mut assoc = Association::zeros(cfg);
        assoc.bs_leo[[0, 0, 0]] = 1;
        assoc.bs_leo[[0, 1, 0]] = 1;
        let report = check_feasibility(&scn, &assoc, &Allocation::zeros(cfg), 1, None);
        assert!(!report.bs_single_leo.ok);

        // satellite over-granting its band
        let mut assoc = Association::zeros(cfg);
        let mut alloc = Allocation::zeros(cfg);
        assoc.bs_leo[[0, 0, 0]] = 1;
        alloc.bandwidth_hz[[0, 0, 0]] = cfg.leo_bandwidth_hz * 1.5;
        let report = check_feasibility(&scn, &assoc, &alloc, 1, None);
        assert!(!report.leo_band_budget.ok);
        assert!(report.leo_band_budget.worst > 0.4 * cfg.leo_bandwidth_hz);

        // user power budget blown
        let mut assoc = Association::zeros(cfg);
        let mut alloc = Allocation::zeros(cfg);
        assoc.ue_sc[[0, 0, 0, 0]] = 1;
        alloc.ue_power_w[[0, 0, 0, 0]] = cfg.ue_max_power_w * 2.0;
        let report = check_feasibility(&scn, &assoc, &alloc, 1, None);
        assert!(!report.ue_power_budget.ok);

        // BS power budget blown
        let mut alloc = Allocation::zeros(cfg);
        alloc.bs_power_w[[0, 0]] = cfg.bs_max_power_w + 1.0;
        let report = check_feasibility(&scn, &Association::zeros(cfg), &alloc, 1, None);
        assert!(!report.bs_power_budget.ok);
    }

    #[test]
    fn backhaul_fit_tolerance_semantics() {
        let mut scn = pinned_scenario();
        scn.channels.backhaul_gain[[0, 0, 0]] = 1e-13;
        let cfg = scn.cfg.clone();

        let mut assoc = Association::zeros(&cfg);
        let mut alloc = Allocation::zeros(&cfg);
        assoc.bs_leo[[0, 0, 0]] = 1;
        alloc.bs_power_w[[0, 0]] = cfg.bs_max_power_w;
        alloc.bandwidth_hz[[0, 0, 0]] = 1e6;
        assoc.ue_sc[[0, 0, 0, 0]] = 1;

        let capacity = data_bs_total(&scn, &assoc, &alloc, 1, 0);
        assert!(capacity > 0.0);

        // delivered traffic just inside the relative tolerance passes,
        // one percent above capacity does not
        let mut delivered = vec![0.0; cfg.num_ue];
        delivered[0] = capacity * (1.0 + 5e-7);
        let report = check_feasibility(&scn, &assoc, &alloc, 1, Some(&delivered));
        assert!(report.backhaul_fit.ok);
        assert!(report.backhaul_fit.worst > 0.0);

        delivered[0] = capacity * (1.0 + 2e-6);
        let report = check_feasibility(&scn, &assoc, &alloc, 1, Some(&delivered));
        assert!(!report.backhaul_fit.ok);

        delivered[0] = capacity * 1.01;
        let report = check_feasibility(&scn, &assoc, &alloc, 1, Some(&delivered));
        assert!(!report.backhaul_fit.ok);
    }

    #[test]
    fn demand_update_clamps_at_zero() {
        let state = DemandState {
            initial_bits: vec![2.5e6, 2.5e6],
            remaining_bits: vec![2.5e6, 2.5e6],
        };
        let next = update_demand(&state, &[1e6, 3e6]);
        assert_eq!(next.remaining_bits, vec![1.5e6, 0.0]);
        assert!(!next.all_met());

        let unchanged = update_demand(&next, &[0.0, 0.0]);
        assert_eq!(unchanged.remaining_bits, vec![1.5e6, 0.0]);

        let done = update_demand(&next, &[2e6, 0.0]);
        assert!(done.all_met());
        assert_eq!(done.total_remaining(), 0.0);
    }

    proptest! {
        /// Backhaul bits are concave in (power, bandwidth): the midpoint of
        /// any two operating points does at least as well as the average.
        #[test]
        fn backhaul_midpoint_concavity(
            p1 in 1e-3f64..30.0, p2 in 1e-3f64..30.0,
            w1 in 1e4f64..2e7, w2 in 1e4f64..2e7,
        ) {
            let mut scn = pinned_scenario();
            scn.channels.backhaul_gain[[0, 0, 0]] = 1e-13;
            let mut assoc = Association::zeros(&scn.cfg);
            assoc.bs_leo[[0, 0, 0]] = 1;
            let mut alloc = Allocation::zeros(&scn.cfg);

            let mut eval = |p: f64, w: f64| {
                alloc.bs_power_w[[0, 0]] = p;
                alloc.bandwidth_hz[[0, 0, 0]] = w;
                data_bs_leo(&scn, &assoc, &alloc, 1, 0, 0)
            };
            let a = eval(p1, w1);
            let b = eval(p2, w2);
            let mid = eval(0.5 * (p1 + p2), 0.5 * (w1 + w2));
            prop_assert!(mid >= 0.5 * (a + b) - 1e-9 * (a + b).max(1.0));
        }

        /// SINR grows with own power and shrinks with interferer power.
        #[test]
        fn sinr_monotonicity(p in 1e-6f64..0.25, q in 1e-6f64..0.25) {
            let mut scn = pinned_scenario();
            scn.channels.access_gain[[0, 0, 0, 0]] = 1e-12;
            scn.channels.access_gain[[0, 0, 1, 0]] = 5e-13;
            let mut assoc = Association::zeros(&scn.cfg);
            assoc.ue_sc[[0, 0, 0, 0]] = 1;
            assoc.ue_sc[[0, 1, 1, 0]] = 1;
            let mut alloc = Allocation::zeros(&scn.cfg);
            alloc.ue_power_w[[0, 0, 0, 0]] = p;
            alloc.ue_power_w[[0, 1, 1, 0]] = q;
            let base = sinr_ue(&scn, &assoc, &alloc, 1, 0, 0, 0);

            alloc.ue_power_w[[0, 0, 0, 0]] = p * 2.0;
            let more_power = sinr_ue(&scn, &assoc, &alloc, 1, 0, 0, 0);
            prop_assert!(more_power > base);

            alloc.ue_power_w[[0, 0, 0, 0]] = p;
            alloc.ue_power_w[[0, 1, 1, 0]] = q * 2.0;
            let more_interference = sinr_ue(&scn, &assoc, &alloc, 1, 0, 0, 0);
            prop_assert!(more_interference < base);
        }
    }
}
