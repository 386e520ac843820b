//! Greedy matching baseline.
//!
//! A deliberately simple point of comparison for the iterative scheduler:
//! every decision is made once per slot from channel strength alone.
//! Each BS links to its strongest satellite at full backhaul power, each
//! satellite splits its band evenly over the BSs it serves, each active
//! user attaches to the BS with the strongest average access gain, and
//! sub-channels are dealt round-robin with every user grabbing its best
//! remaining one.  Transmit powers come from water-filling per user,
//! shrunk by bisection on a per-user power cap wherever a BS would push
//! more access traffic than its backhaul link can carry.

use ndarray::{Array2, Array3};

use crate::error::Result;
use crate::rate::{Allocation, Association, DemandState};
use crate::sca::{settle_slot, AlgorithmKind, SlotRecord, TsLoopResult};
use crate::scenario::Scenario;

/// Absolute tolerance, in bits per slot, for matching access to backhaul.
pub const RATE_MATCH_TOL_BITS: f64 = 1e3;
const BISECT_MAX_ITERS: usize = 60;

/// Classic water-filling over parallel channels: maximizes the sum of
/// `log(1 + p_i g_i / noise_i)` subject to `sum p_i = budget`, `p_i >= 0`.
/// Channels with non-positive gain get nothing.
pub fn waterfill(gains: &[f64], noise: &[f64], budget: f64) -> Vec<f64> {
    assert_eq!(gains.len(), noise.len());
    let n = gains.len();
    let mut powers = vec![0.0; n];
    if n == 0 || budget <= 0.0 {
        return powers;
    }
    // inversion level of each channel; the water rises above these
    let mut order: Vec<usize> = (0..n).collect();
    let base: Vec<f64> = gains
        .iter()
        .zip(noise)
        .map(|(&g, &d)| if g > 0.0 { d / g } else { f64::INFINITY })
        .collect();
    order.sort_by(|&a, &b| base[a].total_cmp(&base[b]));
    if base[order[0]].is_infinite() {
        return powers;
    }

    let mut level = 0.0;
    let mut active = 0;
    let mut prefix = 0.0;
    for (count, &idx) in order.iter().enumerate() {
        if base[idx].is_infinite() {
            break;
        }
        prefix += base[idx];
        let candidate = (budget + prefix) / (count + 1) as f64;
        if candidate > base[idx] {
            level = candidate;
            active = count + 1;
        } else {
            break;
        }
    }
    for &idx in order.iter().take(active) {
        powers[idx] = level - base[idx];
    }
    powers
}

/// Integral association plus backhaul split chosen greedily for one slot.
#[derive(Debug, Clone)]
pub struct GreedyPlan {
    /// alpha(n, k, s).
    pub ue_sc: Array3<u8>,
    /// mu(m, n).
    pub bs_leo: Array2<u8>,
    /// Even split of each serving satellite's band, Hz.
    pub bandwidth_hz: Array2<f64>,
    /// Full backhaul power everywhere.
    pub bs_power_w: Vec<f64>,
    /// Serving BS per user, None for idle users.
    pub serving_bs: Vec<Option<usize>>,
}

/// Strength-based association for slot `t` (1-based); users with
/// `active[k] == false` are left unattached.
pub fn greedy_associate(scn: &Scenario, t: usize, active: &[bool]) -> GreedyPlan {
    let cfg = &scn.cfg;
    assert_eq!(active.len(), cfg.num_ue);
    let access = scn.channels.access_slice(t);
    let backhaul = scn.channels.backhaul_slice(t);

    // BS -> satellite: strongest backhaul gain, full power, even band split
    let mut bs_leo = Array2::<u8>::zeros((cfg.num_leo, cfg.num_bs));
    for n in 0..cfg.num_bs {
        let best = (0..cfg.num_leo)
            .max_by(|&a, &b| backhaul[[a, n]].total_cmp(&backhaul[[b, n]]))
            .expect("at least one satellite");
        bs_leo[[best, n]] = 1;
    }
    let mut bandwidth_hz = Array2::<f64>::zeros((cfg.num_leo, cfg.num_bs));
    for m in 0..cfg.num_leo {
        let served: Vec<usize> = (0..cfg.num_bs).filter(|&n| bs_leo[[m, n]] == 1).collect();
        if !served.is_empty() {
            let share = cfg.leo_bandwidth_hz / served.len() as f64;
            for n in served {
                bandwidth_hz[[m, n]] = share;
            }
        }
    }

    // user -> BS: strongest mean access gain over sub-channels
    let mut serving_bs = vec![None; cfg.num_ue];
    for k in 0..cfg.num_ue {
        if !active[k] {
            continue;
        }
        let mean_gain = |n: usize| -> f64 {
            (0..cfg.num_sc).map(|s| access[[n, k, s]]).sum::<f64>() / cfg.num_sc as f64
        };
        serving_bs[k] = (0..cfg.num_bs).max_by(|&a, &b| mean_gain(a).total_cmp(&mean_gain(b)));
    }

    // sub-channels: round-robin over each BS's users, best remaining first
    let mut ue_sc = Array3::<u8>::zeros((cfg.num_bs, cfg.num_ue, cfg.num_sc));
    for n in 0..cfg.num_bs {
        let users: Vec<usize> = (0..cfg.num_ue)
            .filter(|&k| serving_bs[k] == Some(n))
            .collect();
        if users.is_empty() {
            continue;
        }
        let mut taken = vec![false; cfg.num_sc];
        let mut held = vec![0usize; cfg.num_ue];
        for _round in 0..cfg.max_sc_per_ue {
            let mut any = false;
            for &k in &users {
                if held[k] >= cfg.max_sc_per_ue {
                    continue;
                }
                let pick = (0..cfg.num_sc)
                    .filter(|&s| !taken[s])
                    .max_by(|&a, &b| access[[n, k, a]].total_cmp(&access[[n, k, b]]));
                if let Some(s) = pick {
                    taken[s] = true;
                    held[k] += 1;
                    ue_sc[[n, k, s]] = 1;
                    any = true;
                }
            }
            if !any {
                break;
            }
        }
    }

    GreedyPlan {
        ue_sc,
        bs_leo,
        bandwidth_hz,
        bs_power_w: vec![cfg.bs_max_power_w; cfg.num_bs],
        serving_bs,
    }
}

/// Backhaul bits one BS can relay this slot under the plan.
fn plan_backhaul_bits(scn: &Scenario, t: usize, plan: &GreedyPlan, n: usize) -> f64 {
    let cfg = &scn.cfg;
    let backhaul = scn.channels.backhaul_slice(t);
    let delta = scn.channels.noise_density_w_hz;
    let mut bits = 0.0;
    for m in 0..cfg.num_leo {
        if plan.bs_leo[[m, n]] == 0 {
            continue;
        }
        let w = plan.bandwidth_hz[[m, n]];
        if w > 0.0 {
            let snr = plan.bs_power_w[n] * backhaul[[m, n]] / (w * delta);
            bits += cfg.ts_duration_s * w * (1.0 + snr).log2();
        }
    }
    bits
}

/// Water-fill each user's held sub-channels under a per-user budget cap,
/// and the interference-free access bits that allocation would carry.
fn fill_bs_users(
    scn: &Scenario,
    t: usize,
    plan: &GreedyPlan,
    n: usize,
    users: &[usize],
    cap_w: f64,
) -> (Vec<(usize, Vec<(usize, f64)>)>, f64) {
    let cfg = &scn.cfg;
    let access = scn.channels.access_slice(t);
    let sigma2 = scn.channels.noise_per_sc_w;
    let budget = cap_w.min(cfg.ue_max_power_w).max(0.0);
    let mut fills = Vec::with_capacity(users.len());
    let mut bits = 0.0;
    for &k in users {
        let scs: Vec<usize> = (0..cfg.num_sc)
            .filter(|&s| plan.ue_sc[[n, k, s]] == 1)
            .collect();
        let gains: Vec<f64> = scs.iter().map(|&s| access[[n, k, s]]).collect();
        let noise = vec![sigma2; scs.len()];
        let powers = waterfill(&gains, &noise, budget);
        for ((&s, &p), &g) in scs.iter().zip(&powers).zip(&gains) {
            if p > 0.0 {
                bits += cfg.ts_duration_s
                    * cfg.sc_bandwidth_hz
                    * (1.0 + p * g / sigma2).log2();
            }
            let _ = s;
        }
        fills.push((k, scs.into_iter().zip(powers).collect()));
    }
    (fills, bits)
}

/// Per-user powers for the plan: full-budget water-filling, shrunk by
/// bisection on the per-user cap at any BS whose interference-free access
/// bits would exceed its backhaul bits.
pub fn allocate_powers(scn: &Scenario, t: usize, plan: &GreedyPlan) -> Array3<f64> {
    let cfg = &scn.cfg;
    let mut power = Array3::<f64>::zeros((cfg.num_bs, cfg.num_ue, cfg.num_sc));
    for n in 0..cfg.num_bs {
        let users: Vec<usize> = (0..cfg.num_ue)
            .filter(|&k| plan.serving_bs[k] == Some(n))
            .collect();
        if users.is_empty() {
            continue;
        }
        let capacity = plan_backhaul_bits(scn, t, plan, n);
        if capacity <= 0.0 {
            continue; // nothing can be relayed: leave the users silent
        }
        let (full_fill, full_bits) = fill_bs_users(scn, t, plan, n, &users, cfg.ue_max_power_w);
        let chosen = if full_bits <= capacity + RATE_MATCH_TOL_BITS {
            full_fill
        } else {
            let mut lo = 0.0;
            let mut hi = cfg.ue_max_power_w;
            let mut best = full_fill;
            for _ in 0..BISECT_MAX_ITERS {
                let mid = 0.5 * (lo + hi);
                let (fill, bits) = fill_bs_users(scn, t, plan, n, &users, mid);
                best = fill;
                if (bits - capacity).abs() <= RATE_MATCH_TOL_BITS {
                    break;
                }
                if bits > capacity {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            best
        };
        for (k, fills) in chosen {
            for (s, p) in fills {
                power[[n, k, s]] = p;
            }
        }
    }
    power
}

/// Run the greedy baseline over the horizon until demand drains or slots
/// run out.  The result has the same shape as the iterative scheduler's.
pub fn run_greedy(scn: &Scenario) -> Result<TsLoopResult> {
    let cfg = &scn.cfg;
    let mut assoc = Association::zeros(cfg);
    let mut alloc = Allocation::zeros(cfg);
    let mut demand = DemandState::new(cfg);
    let mut slots = Vec::new();
    let mut ts_used = None;

    if demand.all_met() {
        return Ok(TsLoopResult {
            algorithm: AlgorithmKind::Greedy,
            slots,
            association: assoc,
            allocation: alloc,
            ts_used: Some(0),
            residual_bits: demand.remaining_bits,
            horizon: cfg.max_ts,
        });
    }

    for t in 1..=cfg.max_ts {
        let active: Vec<bool> = demand.remaining_bits.iter().map(|&d| d > 0.0).collect();
        let plan = greedy_associate(scn, t, &active);
        let power = allocate_powers(scn, t, &plan);
        let rec = crate::sca::RecoveredSlot {
            ue_sc: plan.ue_sc.clone(),
            bs_leo: plan.bs_leo.clone(),
            ue_power_w: power,
            bs_power_w: plan.bs_power_w.clone(),
            bandwidth_hz: plan.bandwidth_hz.clone(),
        };
        let (delivered, backhaul_scale, feasibility, next_demand) =
            settle_slot(scn, &mut assoc, &mut alloc, t, &rec, &demand);
        demand = next_demand;
        slots.push(SlotRecord {
            ts: t,
            iterations: 0,
            converged: true,
            objective_history: Vec::new(),
            delivered_bits: delivered,
            backhaul_scale,
            feasibility,
        });
        if demand.all_met() {
            ts_used = Some(t);
            break;
        }
    }

    Ok(TsLoopResult {
        algorithm: AlgorithmKind::Greedy,
        slots,
        association: assoc,
        allocation: alloc,
        ts_used,
        residual_bits: demand.remaining_bits,
        horizon: cfg.max_ts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use proptest::prelude::*;

    #[test]
    fn waterfill_two_channel_reference() {
        // bases 0.5 and 1.0, budget 1 -> water level 1.25
        let p = waterfill(&[2.0, 1.0], &[1.0, 1.0], 1.0);
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);

        // tight budget floods only the stronger channel
        let p = waterfill(&[2.0, 1.0], &[1.0, 1.0], 0.2);
        assert!((p[0] - 0.2).abs() < 1e-12);
        assert_eq!(p[1], 0.0);

        assert_eq!(waterfill(&[2.0, 1.0], &[1.0, 1.0], 0.0), vec![0.0, 0.0]);
        assert_eq!(waterfill(&[0.0, 0.0], &[1.0, 1.0], 1.0), vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn waterfill_satisfies_stationarity(
            gains in proptest::collection::vec(0.1f64..10.0, 1..6),
            noise in proptest::collection::vec(1e-3f64..10.0, 6),
            budget in 1e-3f64..5.0,
        ) {
            let noise = &noise[..gains.len()];
            let p = waterfill(&gains, noise, budget);
            let total: f64 = p.iter().sum();
            prop_assert!((total - budget).abs() <= 1e-9 * budget.max(1.0));
            let bases: Vec<f64> = gains.iter().zip(noise).map(|(&g, &d)| d / g).collect();
            let level = p
                .iter()
                .zip(&bases)
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(&pi, &b)| pi + b)
                .fold(f64::NEG_INFINITY, f64::max);
            for (&pi, &b) in p.iter().zip(&bases) {
                prop_assert!(pi >= 0.0);
                if pi > 0.0 {
                    // every flooded channel reaches the common water level
                    prop_assert!((pi + b - level).abs() <= 1e-9 * level.abs().max(1.0));
                } else {
                    // dry channels sit above the water
                    prop_assert!(b >= level - 1e-9 * level.abs().max(1.0));
                }
            }
        }
    }

    /// 1 satellite, 1 BS, 2 users, 2 sub-channels, pinned gains.
    fn two_user_scenario(h_user0: f64, h_user1: f64, backhaul_g: f64) -> Scenario {
        let mut cfg = RunConfig::default();
        cfg.num_leo = 1;
        cfg.num_bs = 1;
        cfg.num_ue = 2;
        cfg.num_sc = 2;
        cfg.max_sc_per_ue = 2;
        cfg.bs_per_cluster = 1;
        cfg.leo_initial_positions = vec![(39.95, 20.0)];
        cfg.rng_seed = 7;
        let mut scn = Scenario::generate(cfg).unwrap();
        scn.channels.noise_per_sc_w = 1.433e-15;
        for t in 0..scn.cfg.max_ts {
            for s in 0..scn.cfg.num_sc {
                scn.channels.access_gain[[t, 0, 0, s]] = h_user0;
                scn.channels.access_gain[[t, 0, 1, s]] = h_user1;
            }
            scn.channels.backhaul_gain[[t, 0, 0]] = backhaul_g;
        }
        scn
    }

    #[test]
    fn association_splits_band_and_subchannels() {
        // four BSs all see the same single satellite: 20 MHz -> 5 MHz each
        let mut cfg = RunConfig::desk_scale(11);
        cfg.num_leo = 1;
        cfg.num_bs = 4;
        cfg.bs_per_cluster = 4;
        cfg.num_ue = 8;
        cfg.leo_bandwidth_hz = 20e6;
        cfg.leo_initial_positions = vec![(39.95, 20.0)];
        let scn = Scenario::generate(cfg).unwrap();
        let plan = greedy_associate(&scn, 1, &vec![true; 8]);
        for n in 0..4 {
            assert_eq!(plan.bs_leo[[0, n]], 1);
            assert!((plan.bandwidth_hz[[0, n]] - 5e6).abs() < 1e-6);
        }

        // two users sharing one BS with 2 sub-channels each
        let scn = two_user_scenario(1e-12, 9e-13, 1e-12);
        let plan = greedy_associate(&scn, 1, &[true, true]);
        let held0: u8 = (0..2).map(|s| plan.ue_sc[[0, 0, s]]).sum();
        let held1: u8 = (0..2).map(|s| plan.ue_sc[[0, 1, s]]).sum();
        assert_eq!(held0, 1);
        assert_eq!(held1, 1);
        // no double-booked sub-channel
        for s in 0..2 {
            assert!(plan.ue_sc[[0, 0, s]] + plan.ue_sc[[0, 1, s]] <= 1);
        }
    }

    #[test]
    fn generous_backhaul_keeps_full_waterfill() {
        let scn = two_user_scenario(1e-12, 1e-12, 1e-12);
        let plan = greedy_associate(&scn, 1, &[true, true]);
        let power = allocate_powers(&scn, 1, &plan);
        // each user pours its whole budget onto its single sub-channel
        for k in 0..2 {
            let total: f64 = (0..2).map(|s| power[[0, k, s]]).sum();
            assert!(
                (total - scn.cfg.ue_max_power_w).abs() < 1e-9,
                "user {k} spent {total}"
            );
        }
    }

    #[test]
    fn bisection_matches_backhaul_capacity() {
        // weak backhaul: capacity far below full-power access bits
        let scn = two_user_scenario(1e-12, 1e-12, 1e-17);
        let plan = greedy_associate(&scn, 1, &[true, true]);
        let power = allocate_powers(&scn, 1, &plan);
        let capacity = plan_backhaul_bits(&scn, 1, &plan, 0);
        let sigma2 = scn.channels.noise_per_sc_w;
        let mut access_bits = 0.0;
        for k in 0..2 {
            for s in 0..2 {
                let p = power[[0, k, s]];
                if p > 0.0 {
                    access_bits += scn.cfg.ts_duration_s
                        * scn.cfg.sc_bandwidth_hz
                        * (1.0 + p * 1e-12 / sigma2).log2();
                }
            }
        }
        assert!(access_bits > 0.0);
        assert!(
            (access_bits - capacity).abs() <= RATE_MATCH_TOL_BITS,
            "access {access_bits} vs capacity {capacity}"
        );
    }

    #[test]
    fn finished_user_released_next_slot() {
        // user 0 is 10x stronger and drains first
        let mut scn = two_user_scenario(1e-12, 1e-13, 1e-12);
        scn.cfg.demand_bits = 60_000.0;
        let result = run_greedy(&scn).unwrap();
        assert!(result.demand_met());
        let v = result.ts_used.unwrap();
        assert!(v >= 2, "two slots at least, got {v}");
        // slot 1 serves both; slot 2 must not assign user 0 anything
        let row0 = result.association.ue_sc.index_axis(ndarray::Axis(0), 0);
        let row1 = result.association.ue_sc.index_axis(ndarray::Axis(0), 1);
        assert!(row0.iter().any(|&a| a == 1));
        let user0_slot2: u8 = (0..2).map(|s| row1[[0, 0, s]]).sum();
        assert_eq!(user0_slot2, 0);
        let user1_slot2: u8 = (0..2).map(|s| row1[[0, 1, s]]).sum();
        assert_eq!(user1_slot2, 2, "freed sub-channel goes to the slow user");
        // every recorded slot passes the feasibility audit
        for slot in &result.slots {
            assert!(slot.feasibility.all_ok(), "slot {}: {:?}", slot.ts, slot.feasibility);
        }
    }
}
