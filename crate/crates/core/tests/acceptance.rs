//! Acceptance criteria. Each test prints one `ACCEPTANCE <n> PASS|FAIL` line
//! before asserting, so the summary survives a failing run.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use evfleet::harness::{
    export_trace, initial_state, mpc_config_for, run_night, run_paired, run_spuc, SchedulerKind,
};
use evfleet::model::{ActivationDecision, ClusterIndex, ClusterSet, ClusterSpec, FleetEntry, FleetState};
use evfleet::mpc::{build_program, forecast_dispatch, initial_purchase, solve, BulkPurchase, MpcConfig, SolverMode};
use evfleet::scenario::{Scenario, ScenarioConfig};
use evfleet::spuc::SpucScheduler;

fn report(n: u32, ok: bool, detail: String) {
    println!("ACCEPTANCE {n} {}: {detail}", if ok { "PASS" } else { "FAIL" });
}

/// Reduced-scale scenario; the wind-following capacity shrinks with the
/// fleet so that its share of the fleet's flexibility stays as at 1000 EVs.
fn reduced(fleet: u32, epochs: usize, seed: u64) -> Scenario {
    let mut cfg = ScenarioConfig {
        rng_seed: seed,
        ..ScenarioConfig::scaled(fleet, epochs)
    };
    let share = fleet as f64 / 1000.0;
    cfg.wind_cap_kw *= share;
    cfg.wind_noise_kw *= share;
    Scenario::generate(&cfg).unwrap()
}

/// Full-horizon MPC, the default configuration.
fn mpc_base() -> MpcConfig {
    MpcConfig::default()
}

#[test]
fn criterion_1_hard_qos() {
    let mut worst = (1.0f64, String::new());
    let mut runs = 0;
    for seed in 0..20u64 {
        let scenario = reduced(100, 48, seed);
        let paired = run_paired(&scenario, &mpc_base(), false).unwrap();
        for trace in [&paired.mpc.trace, &paired.spuc_static.trace, &paired.spuc_updated.trace] {
            runs += 1;
            if trace.qos_completion_fraction < worst.0 {
                worst = (trace.qos_completion_fraction, format!("seed {seed} {}", trace.scheduler));
            }
        }
    }
    let ok = worst.0 == 1.0;
    report(
        1,
        ok,
        format!("{runs} nights (20 seeds, 100 EVs, T = 48), lowest completion fraction {} {}", worst.0, worst.1),
    );
    assert!(ok);
}

#[derive(Debug, Clone)]
struct Small {
    specs: Arc<ClusterSet>,
    fleet: Vec<FleetEntry>,
    horizon: usize,
}

fn small_instance(rng: &mut ChaCha8Rng, max_q: usize, max_s: usize, max_t: usize, max_evs: u32) -> Small {
    let q_count = rng.gen_range(1..=max_q);
    let horizon = rng.gen_range(max_s..=max_t);
    let mut specs = Vec::new();
    let mut fleet = Vec::new();
    let mut left = rng.gen_range(1..=max_evs);
    for q in 1..=q_count {
        let s_max = rng.gen_range(2..=max_s);
        let pulse: Vec<f64> = (1..s_max).map(|_| rng.gen_range(1..=6) as f64 * 0.5).collect();
        let deadline = rng.gen_range(s_max..=horizon);
        specs.push(ClusterSpec::new(q, format!("c{q}"), pulse, deadline, 60.0).unwrap());
        let share = if q == q_count { left } else { rng.gen_range(0..=left) };
        left -= share;
        let mut counts = vec![0u32; s_max + 1];
        for _ in 0..share {
            counts[rng.gen_range(1..=s_max)] += 1;
        }
        for (s, &n) in counts.iter().enumerate() {
            if n > 0 {
                fleet.push(FleetEntry::new(q, s, n));
            }
        }
    }
    Small {
        specs: Arc::new(ClusterSet::new(specs).unwrap()),
        fleet,
        horizon,
    }
}

fn random_decision(state: &FleetState, rng: &mut ChaCha8Rng) -> ActivationDecision {
    let t = state.epoch + 1;
    let mut d = ActivationDecision::zeros(state.specs(), t);
    for spec in state.specs().specs() {
        let q = spec.class_index;
        for s in 1..spec.subclass_count {
            let lo = state.min_activation().get(q, s, t).saturating_sub(state.cumulative(q, s));
            d.set(q, s, rng.gen_range(lo..=state.population(q, s)));
        }
    }
    d
}

#[test]
fn criterion_2_population_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checks = 0u64;
    let mut mismatches = 0u64;
    for _ in 0..100 {
        let inst = small_instance(&mut rng, 3, 6, 16, 30);
        let mut state = FleetState::new(inst.specs.clone(), &inst.fleet, inst.horizon).unwrap();
        // D_s(t - 1) accumulated here, independently of the state.
        let mut cum: Vec<Vec<i64>> = inst.specs.specs().iter().map(|c| vec![0; c.subclass_count + 1]).collect();
        for _ in 1..=inst.horizon {
            let d = random_decision(&state, &mut rng);
            for spec in inst.specs.specs() {
                for s in 1..spec.subclass_count {
                    cum[spec.class_index - 1][s] += d.get(spec.class_index, s) as i64;
                }
            }
            state.step(&d).unwrap();
            for spec in inst.specs.specs() {
                let q = spec.class_index;
                for s in 1..=spec.subclass_count {
                    let row = &cum[q - 1];
                    let closed = state.initial_population(q, s) as i64 + if s > 1 { row[s - 1] } else { 0 } - row[s];
                    checks += 1;
                    if closed != state.population(q, s) as i64 {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let ok = mismatches == 0;
    report(2, ok, format!("100 instances, {checks} population checks, {mismatches} mismatches"));
    assert!(ok);
}

#[test]
fn criterion_3_exact_mode_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact_mismatch = 0;
    let mut unproven = 0;
    let mut worst_ratio: f64 = 1.0;
    let mut relaxed_misses = 0;
    let mut nodes = 0;
    let mut checked = 0;
    let mut skipped = 0;
    let started = Instant::now();
    while checked < 100 {
        let inst = small_instance(&mut rng, 2, 4, 12, 10);
        let delta = rng.gen_range(1..=4usize);
        let cfg = MpcConfig {
            horizon_end: inst.horizon,
            epochs_per_hour: delta,
            ..MpcConfig::default()
        };
        let mut state = FleetState::new(inst.specs.clone(), &inst.fleet, inst.horizon).unwrap();
        for _ in 0..rng.gen_range(0..=inst.horizon / 2) {
            let d = random_decision(&state, &mut rng);
            state.step(&d).unwrap();
        }
        let hourly: Vec<f64> = (0..inst.horizon.div_ceil(delta))
            .map(|_| rng.gen_range(0..=24) as f64 * 0.25)
            .collect();
        let bulk = BulkPurchase::from_hourly(hourly.clone(), inst.horizon, delta);
        let a = rng.gen_range(-8..=8) as f64 * 0.25;
        let t = state.epoch + 1;
        let program = build_program(&state, &bulk, &forecast_dispatch(a, t, &cfg), &cfg).unwrap();
        if !program.lp.integer.iter().any(|&i| i) {
            // Every activation is forced; nothing to optimize.
            skipped += 1;
            continue;
        }
        checked += 1;

        let hour_end = ((t - 1) / delta + 1) * delta;
        let (targets, weights): (Vec<f64>, Vec<f64>) = (t..=inst.horizon)
            .map(|l| {
                let p = hourly[(l - 1) / delta];
                if l <= hour_end {
                    (p + a, 10.0)
                } else {
                    (p, 1.0)
                }
            })
            .unzip();
        let minimum = common::enumerate_minimum(&state, &targets, &weights);

        let exact = solve(&program, SolverMode::Exact, &cfg).unwrap();
        let relaxed = solve(&program, SolverMode::Relaxed, &cfg).unwrap();
        if exact.objective != minimum {
            exact_mismatch += 1;
            eprintln!("exact {} vs enumeration {minimum} on {inst:?}", exact.objective);
        }
        if !exact.proven_optimal {
            unproven += 1;
        }
        nodes += exact.nodes;
        if relaxed.objective > minimum * 1.05 + 1e-9 {
            relaxed_misses += 1;
        }
        if minimum > 0.0 {
            worst_ratio = worst_ratio.max(relaxed.objective / minimum);
        }
    }
    let ok = exact_mismatch == 0 && unproven == 0 && relaxed_misses == 0;
    report(
        3,
        ok,
        format!(
            "{checked} instances with free activations ({skipped} fully forced draws skipped, {nodes} B&B nodes) in {:.2} s: \
             {exact_mismatch} exact mismatches, {unproven} unproven, {relaxed_misses} relaxed beyond 5% \
             (worst ratio {worst_ratio:.4})",
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criteria_4_5_7_full_nights() {
    let mut ordered = 0;
    let mut separated = 0;
    let mut last_quarter = 0;
    let mut mpc_worst_seconds: f64 = 0.0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let scenario = reduced(200, 144, seed);
        let runs = run_paired(&scenario, &mpc_base(), false).unwrap();
        let m = runs.mpc.trace.deviation_energy_kwh;
        let u = runs.spuc_updated.trace.deviation_energy_kwh;
        let s = runs.spuc_static.trace.deviation_energy_kwh;
        if m <= u && u <= s {
            ordered += 1;
        }
        if m <= 0.1 * s {
            separated += 1;
        }
        let shares = runs.spuc_static.trace.quarter_shares();
        if shares[3] > shares[0] && shares[3] > shares[1] && shares[3] > shares[2] {
            last_quarter += 1;
        }
        mpc_worst_seconds = mpc_worst_seconds.max(runs.mpc.trace.runtime_seconds);
        lines.push(format!(
            "seed {seed}: {} EVs, mpc {m:.3} kWh, spuc-updated {u:.3} kWh, spuc-static {s:.3} kWh, \
             static quarter shares {:.2?}, mpc {:.0} s",
            scenario.fleet_size(),
            shares,
            runs.mpc.trace.runtime_seconds
        ));
    }
    for l in &lines {
        println!("  {l}");
    }

    let big = Scenario::generate(&ScenarioConfig {
        rng_seed: 1000,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let cfg = mpc_config_for(&big, &mpc_base());
    let p0 = initial_purchase(&initial_state(&big).unwrap(), &cfg).unwrap();
    let spuc = run_spuc(&big, &p0.profile(), SchedulerKind::SpucStatic, false).unwrap();
    let spuc_seconds = spuc.trace.runtime_seconds;

    let ok4 = ordered == 10 && separated == 10;
    report(
        4,
        ok4,
        format!("mpc <= spuc-updated <= spuc-static in {ordered}/10 runs, mpc <= 0.1 x spuc-static in {separated}/10"),
    );
    let ok5 = last_quarter >= 8;
    report(5, ok5, format!("final quarter has the largest spuc-static share in {last_quarter}/10 runs"));
    let ok7 = spuc_seconds < 60.0 && mpc_worst_seconds < 1800.0;
    report(
        7,
        ok7,
        format!(
            "spuc night with {} EVs, T = 144: {spuc_seconds:.2} s (limit 60); slowest mpc night with ~200 EVs: \
             {mpc_worst_seconds:.0} s (limit 1800)",
            big.fleet_size()
        ),
    );
    assert!(ok4 && ok5 && ok7);
}

/// Independent SPUC quantities for cluster `(q, s)` at epoch `t`.
fn oracle_rank(spec: &ClusterSpec, s: usize, t: usize) -> (f64, f64) {
    let rest = &spec.pulse[s - 1..];
    let sum: f64 = rest.iter().sum();
    let mean = sum / rest.len() as f64;
    let var: f64 = rest.iter().map(|g| (g - mean) * (g - mean)).sum();
    let slack = spec.deadline as i64 - (t as i64 + spec.subclass_count as i64 - s as i64);
    (slack as f64 / sum, var)
}

#[test]
fn criterion_6_spuc_picks_and_overshoot() {
    let mut picks = 0u64;
    let mut wrong_picks = 0u64;
    let mut overshoot_checks = 0u64;
    let mut overshoot_violations = 0u64;
    let mut early_stops = 0u64;
    for seed in 0..5u64 {
        let scenario = reduced(200, 144, 600 + seed);
        let cfg = mpc_config_for(&scenario, &mpc_base());
        let mut state = initial_state(&scenario).unwrap();
        let p0 = initial_purchase(&state, &cfg).unwrap().profile();
        let specs = scenario.specs.clone();
        let max_g = specs.specs().iter().flat_map(|c| c.pulse.iter().copied()).fold(0.0, f64::max);
        let sched = SpucScheduler::new(specs.clone());
        for t in 1..=scenario.config.night_epochs {
            let target = p0[t - 1] + scenario.wind[t - 1];
            let out = sched.schedule_epoch(&state, target).unwrap();

            // Replay the fill loop: forced activations first, then picks.
            let mut taken: HashMap<ClusterIndex, u32> = HashMap::new();
            let mut load = 0.0;
            for spec in specs.specs() {
                let q = spec.class_index;
                for s in 1..spec.subclass_count {
                    let avail = state.population(q, s);
                    let forced = if spec.pulse[s - 1..].iter().sum::<f64>() <= 0.0 {
                        avail
                    } else {
                        state.min_activation().get(q, s, t).saturating_sub(state.cumulative(q, s))
                    };
                    taken.insert(ClusterIndex::new(q, s), forced);
                    load += forced as f64 * spec.pulse[s - 1];
                }
            }
            let forced_load = load;
            for pick in &out.picks {
                let mut best: Option<(ClusterIndex, f64, f64)> = None;
                for spec in specs.specs() {
                    let q = spec.class_index;
                    for s in 1..spec.subclass_count {
                        let c = ClusterIndex::new(q, s);
                        if spec.pulse[s - 1..].iter().sum::<f64>() <= 0.0 || taken[&c] >= state.population(q, s) {
                            continue;
                        }
                        let (chi, var) = oracle_rank(spec, s, t);
                        let better = match best {
                            None => true,
                            Some((_, bc, bv)) => chi > bc || (chi == bc && var > bv),
                        };
                        if better {
                            best = Some((c, chi, var));
                        }
                    }
                }
                picks += 1;
                if best.map(|b| b.0) != Some(pick.ranking.cluster) || load > target {
                    wrong_picks += 1;
                }
                let c = pick.ranking.cluster;
                *taken.get_mut(&c).unwrap() += 1;
                load += specs.class(c.q).pulse[c.s - 1];
            }
            // The loop may only stop early when nothing is left to pick.
            let leftover = specs.specs().iter().any(|spec| {
                (1..spec.subclass_count).any(|s| {
                    spec.pulse[s - 1..].iter().sum::<f64>() > 0.0
                        && taken[&ClusterIndex::new(spec.class_index, s)] < state.population(spec.class_index, s)
                })
            });
            if load <= target && leftover {
                early_stops += 1;
            }
            if forced_load <= target {
                overshoot_checks += 1;
                if load > target + max_g {
                    overshoot_violations += 1;
                }
            }
            if (load - out.load_kw).abs() > 1e-9 {
                wrong_picks += 1;
            }
            state.step(&out.decision).unwrap();
        }
    }
    let ok = wrong_picks == 0 && overshoot_violations == 0 && early_stops == 0;
    report(
        6,
        ok,
        format!(
            "{picks} picks checked, {wrong_picks} not the argmax, {early_stops} early stops; \
             overshoot bound held in {}/{overshoot_checks} epochs",
            overshoot_checks - overshoot_violations
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_replay_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut files = 0;
    for kind in SchedulerKind::ALL {
        let mut first: Option<Vec<u8>> = None;
        for replay in 0..5 {
            let scenario = reduced(60, 48, 8);
            let trace = run_night(&scenario, kind, &mpc_base()).unwrap();
            let path = dir.path().join(format!("{kind}-{replay}.csv"));
            export_trace(&trace, &path).unwrap();
            let bytes = std::fs::read(&path).unwrap();
            files += 1;
            match &first {
                None => first = Some(bytes),
                Some(b) => identical &= *b == bytes,
            }
        }
    }
    report(
        8,
        identical,
        format!("{files} CSV exports (3 schedulers x 5 replays) byte-identical: {identical}"),
    );
    assert!(identical);
}
