//! Dump the relaxed state and recovery of one slot for inspection.
//!
//! Usage: cargo run --release -p istn-core --example inspect_slot [seed] [iters]

use istn_core::config::RunConfig;
use istn_core::rate::data_ue_sc;
use istn_core::sca::{recover_binaries, run_sca_for_ts, ScaOptions};
use istn_core::scenario::Scenario;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);

    let cfg = RunConfig::desk_scale(seed);
    let scn = Scenario::generate(cfg).unwrap();
    let cfg = &scn.cfg;
    let weights = vec![cfg.demand_bits; cfg.num_ue];
    let opts = ScaOptions {
        max_iters: iters,
        ..Default::default()
    };
    let state = run_sca_for_ts(&scn, 1, &weights, &opts).unwrap();
    println!(
        "iterations {} converged {} obj {:.4e}",
        state.iterations,
        state.converged,
        state.objective_history.last().unwrap()
    );

    if let Some(sol) = &state.last_solution {
        println!("\nlambda_ue (bits), rows = BS, cols = user:");
        for n in 0..cfg.num_bs {
            let row: Vec<String> = (0..cfg.num_ue)
                .map(|k| format!("{:>10.1}", sol.ue_rate_bits[[n, k]]))
                .collect();
            println!("  bs{n}: {}", row.join(" "));
        }
        println!("lambda_bs (bits): {:?}", sol.bs_rate_bits.iter().map(|x| *x as i64).collect::<Vec<_>>());
    }

    println!("\nper-user power by BS (sum over SCs, mW):");
    for k in 0..cfg.num_ue {
        let by_bs: Vec<String> = (0..cfg.num_bs)
            .map(|n| {
                let m: f64 = (0..cfg.num_sc).map(|s| state.ue_power_w[[n, k, s]]).sum();
                format!("{:>8.3}", m * 1e3)
            })
            .collect();
        println!("  ue{k}: {}", by_bs.join(" "));
    }

    println!("\nscores zeta*p (links >= 0.01 shown):");
    for n in 0..cfg.num_bs {
        for k in 0..cfg.num_ue {
            for s in 0..cfg.num_sc {
                let score = state.weights.zeta[[n, k, s]] * state.ue_power_w[[n, k, s]];
                if score >= 0.01 {
                    println!(
                        "  (n{n} k{k} s{s}) score {:.3} p {:.3e} W",
                        score,
                        state.ue_power_w[[n, k, s]]
                    );
                }
            }
        }
    }

    println!("\nbandwidth (MHz) and scores chi*W:");
    for m in 0..cfg.num_leo {
        for n in 0..cfg.num_bs {
            let w = state.bandwidth_hz[[m, n]];
            let score = state.weights.chi[[m, n]] * w;
            println!("  (m{m} n{n}) W {:>8.3} MHz score {:.3}", w / 1e6, score);
        }
    }

    let rec = recover_binaries(&scn, &state);
    println!("\nrecovered alpha count: {}", rec.ue_sc.iter().filter(|&&a| a == 1).count());
    println!("recovered mu: {:?}", rec.bs_leo);

    // realized rates under recovery
    let mut assoc = istn_core::rate::Association::zeros(cfg);
    let mut alloc = istn_core::rate::Allocation::zeros(cfg);
    for n in 0..cfg.num_bs {
        for k in 0..cfg.num_ue {
            for s in 0..cfg.num_sc {
                assoc.ue_sc[[0, n, k, s]] = rec.ue_sc[[n, k, s]];
                alloc.ue_power_w[[0, n, k, s]] = rec.ue_power_w[[n, k, s]];
            }
        }
        alloc.bs_power_w[[0, n]] = rec.bs_power_w[n];
    }
    for m in 0..cfg.num_leo {
        for n in 0..cfg.num_bs {
            assoc.bs_leo[[0, m, n]] = rec.bs_leo[[m, n]];
            alloc.bandwidth_hz[[0, m, n]] = rec.bandwidth_hz[[m, n]];
        }
    }
    println!("\nrealized access bits per user:");
    for k in 0..cfg.num_ue {
        let bits: f64 = (0..cfg.num_bs)
            .flat_map(|n| (0..cfg.num_sc).map(move |s| (n, s)))
            .map(|(n, s)| data_ue_sc(&scn, &assoc, &alloc, 1, n, k, s))
            .sum();
        println!("  ue{k}: {:.1}", bits);
    }
}
