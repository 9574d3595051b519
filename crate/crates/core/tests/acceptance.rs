//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mas_abstraction::abstraction::{AbstractionContext, CellConfig, ConfigEnumerator, ConfigStatus, ControlledTs};
use mas_abstraction::cli;
use mas_abstraction::discretization::{self, Case, ComplexityInput, DiscretizationParams, PlanningConstants};
use mas_abstraction::dynamics::{AgentNetwork, ExampleSystem};
use mas_abstraction::geometry::{self, CellDecomposition, Domain};
use mas_abstraction::linalg;
use mas_abstraction::reachability::{InputFamily, PiecewiseInput};
use mas_abstraction::simulate;
use mas_abstraction::workflow::{self, ExampleSetup};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn random_constants(rng: &mut ChaCha8Rng) -> PlanningConstants {
    let v = rng.random_range(0.1..20.0);
    let m = v * rng.random_range(1.01..10.0);
    let l = rng.random_range(0.1..50.0);
    PlanningConstants::new(m, v, l).unwrap()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let c = random_constants(&mut rng);
        let lambda: f64 = rng.random_range(0.02..0.95);
        let mu_star = 4.0 * lambda / (1.0 - lambda);
        let cap = (1.0 - lambda).powi(2) * c.v_max.powi(2) / (4.0 * c.m * c.l);
        worst = worst.max(rel(discretization::g_bar(lambda, mu_star, &c), cap));
        let mu = mu_star * rng.random_range(1.0..6.0);
        let g = discretization::g_bar(lambda, mu, &c);
        let expect = ((1.0 - lambda) * mu - 2.0 * lambda) * c.v_max / (mu * c.m * c.l);
        worst = worst.max(rel(discretization::h_double_prime(lambda, &c, g), expect));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && secs < 1.0,
        format!("worst relative error {worst:.2e} over 100 constant sets, {secs:.3} s"),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    let mut per_case = [0usize; 3];
    let mut drawn = 0;
    while drawn < 1000 {
        let c = random_constants(&mut rng);
        let lambda: f64 = rng.random_range(0.05..0.9);
        let a = 2.0 * lambda / (1.0 - lambda);
        let mu = match drawn % 3 {
            0 => rng.random_range(0.0..a),
            1 => rng.random_range(a..2.0 * a),
            _ => rng.random_range(2.0 * a..6.0 * a),
        };
        let case = discretization::classify_case(lambda, mu).unwrap();
        let ivs = discretization::admissible_dmax_interval(lambda, mu, &c).unwrap();
        let iv = ivs[rng.random_range(0..ivs.len())];
        if iv.hi <= iv.lo {
            continue;
        }
        let d = rng.random_range(iv.lo..iv.hi).max(iv.hi * 1e-6);
        let Ok(dt_iv) = discretization::admissible_dt_interval(lambda, mu, &c, d) else {
            continue;
        };
        let dt = if dt_iv.hi > dt_iv.lo {
            rng.random_range(dt_iv.lo..=dt_iv.hi)
        } else {
            dt_iv.hi
        };
        let (m, v, l) = (c.m, c.v_max, c.l);
        let r = lambda * v * dt;
        let scale = (m * l * dt * dt).max(d).max(v * dt);
        let slacks = [
            -(m * l * dt * dt - (1.0 - lambda) * v * dt + d) / scale,
            (dt - mu * d / (2.0 * lambda * v)) / dt,
            (dt * (m + v) - d) / scale,
            (r - 0.5 * mu * d) / r,
        ];
        worst = worst.min(slacks.iter().copied().fold(f64::INFINITY, f64::min));
        per_case[match case {
            Case::I => 0,
            Case::II => 1,
            Case::III => 2,
        }] += 1;
        drawn += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst >= -1e-12 && secs < 1.0 && per_case.iter().all(|&n| n > 0),
        format!("1000 pairs (cases I/II/III: {per_case:?}), smallest normalized slack {worst:.2e}, {secs:.3} s"),
    )
}

fn example_setup(lambda: f64) -> ExampleSetup {
    ExampleSetup::new(lambda, 10.0, 10.0, 2.0).unwrap()
}

/// Criteria 3, 4 and 10 share one campaign.
fn criteria_3_4_10() -> [Outcome; 3] {
    let setup = example_setup(0.3);
    let ctx = setup.context();
    let t = Instant::now();
    let camp = workflow::transition_campaign(&ctx, 250, 2, 10.0, 64, true, 9).unwrap();
    let secs = t.elapsed().as_secs_f64();

    let neg_setup = setup.with_unchecked_dt(3.0 * setup.dt);
    let neg = workflow::transition_campaign(&neg_setup.context(), 60, 2, 10.0, 64, false, 10).unwrap();

    let geometry_ok = setup.dt == 2.0 / 26.0 && (setup.dec.side() - 20.0 / 116.0).abs() < 1e-15;
    let endpoint_ok = camp.trials.iter().all(|t| t.endpoint_error <= t.endpoint_tol);
    let c3 = outcome(
        geometry_ok && camp.trials.len() >= 200 && camp.failures() == 0 && endpoint_ok && neg.failures() >= 1,
        format!(
            "{}/{} trials pass (worst endpoint error {:.2e} of tolerance), dt x3 control: {}/{} fail, {secs:.1} s",
            camp.passed,
            camp.trials.len(),
            camp.worst_endpoint_ratio,
            neg.failures(),
            neg.trials.len()
        ),
    );

    let v_max = setup.params.v_max;
    let c4 = outcome(
        camp.max_k <= v_max + 1e-9 && camp.property_max_k <= v_max + 1e-9,
        format!(
            "max |k| {:.4} along trajectories, {:.4} over sampled cell states (v_max {v_max})",
            camp.max_k, camp.property_max_k
        ),
    );

    let a = workflow::transition_campaign(&ctx, 20, 2, 10.0, 16, false, 77).unwrap();
    let b = workflow::transition_campaign(&ctx, 20, 2, 10.0, 16, false, 77).unwrap();
    let reproducible = cli::to_json(&a) == cli::to_json(&b);
    let c10 = outcome(
        camp.worst_refinement_change < 1e-10 && reproducible,
        format!(
            "worst endpoint change under doubled substeps {:.2e}; seeded campaign JSON byte-identical: {reproducible}",
            camp.worst_refinement_change
        ),
    );
    [c3, c4, c10]
}

fn criterion_5() -> Outcome {
    let setup = example_setup(0.3);
    let x0 = ExampleSystem::initial_states();
    let input = PiecewiseInput::constant(ExampleSystem::drifter_input());
    let mut runs =
        vec![workflow::example_closed_loop(&setup, &x0, &input, simulate::min_input_chooser(), true).unwrap()];
    for seed in 0..3 {
        let chooser = simulate::random_chooser(ChaCha8Rng::seed_from_u64(seed));
        runs.push(workflow::example_closed_loop(&setup, &x0, &input, chooser, true).unwrap());
    }
    let tol = 10.0 + 1e-6;
    let mut worst_pair = 0.0_f64;
    let mut worst_norm = 0.0_f64;
    let mut valid = true;
    for run in &runs {
        valid &= run.validate(setup.params.v_max).is_ok() && run.trace.last().map(|r| r.t) == Some(2.0);
        for (a, b) in ExampleSystem::connected_pairs() {
            worst_pair = worst_pair.max(run.max_distance(a, b));
        }
        for row in &run.trace {
            worst_norm = worst_norm.max(row.x.iter().map(|p| linalg::norm(p)).fold(0.0, f64::max));
        }
    }
    outcome(
        valid && worst_pair <= tol && worst_norm <= tol,
        format!(
            "{} runs over [0, 2]: max pair distance {worst_pair:.4}, max |x_i| {worst_norm:.4}",
            runs.len()
        ),
    )
}

/// Two planar agents (a follower and a drifter) on a small box around the
/// origin, where the boundary repulsion vanishes.
fn box_network() -> AgentNetwork {
    let ex = ExampleSystem::new(10.0, 10.0).unwrap();
    AgentNetwork::new(
        2,
        vec![ex.network.agents[0].clone(), ex.network.agents[1].clone()],
        ex.network.bounds,
    )
    .unwrap()
}

fn criterion_6() -> Outcome {
    let net = box_network();
    let c = PlanningConstants::from_network(&net).unwrap();
    let dom = Domain::boxed(vec![-0.3, -0.3], vec![0.3, 0.3]).unwrap();
    let dec = CellDecomposition::build_grid(dom.clone(), geometry::fit_side(&dom, 0.015).unwrap()).unwrap();
    let mut details = vec![];
    let mut pass = true;
    for (mu, dt) in [(2.0, 0.01), (1.5, 0.0075)] {
        let params = DiscretizationParams::general(0.3, mu, &c, dec.d_max(), dt, dom.diameter()).unwrap();
        let ctx = AbstractionContext::new(&net, &params, &dec);
        let need = discretization::min_transitions(mu, 2) as usize;
        let drifter = ctx.build_controlled_ts(1, &ConfigEnumerator::Exhaustive).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let configs: Vec<CellConfig> = (0..400)
            .map(|_| {
                let own = rng.random_range(0..dec.len());
                let p = linalg::add(
                    dec.reference_point(own),
                    &[rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)],
                );
                vec![own, dec.locate(&dom.project(&p)).unwrap()]
            })
            .collect();
        let follower = ctx
            .build_controlled_ts(0, &ConfigEnumerator::Explicit(configs))
            .unwrap();
        let (mut built, mut smallest) = (0usize, usize::MAX);
        for ts in [&drifter, &follower] {
            for (_, s) in ts.configs() {
                if let ConfigStatus::Built { classes, .. } = s {
                    built += 1;
                    smallest = smallest.min(classes.len());
                }
            }
        }
        pass &= built > 0 && smallest >= need;
        details.push(format!(
            "mu = {mu}: {built} Post sets, smallest {smallest} (need {need})"
        ));
    }
    outcome(pass, details.join("; "))
}

fn criterion_7() -> Outcome {
    let x0 = ExampleSystem::initial_states();
    let family = InputFamily::example_switching();
    let mut sizes = vec![];
    for lambda in [0.3, 0.4] {
        let setup = example_setup(lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let two = workflow::case_two(&setup, &x0, &family, &[0], false, &mut rng).unwrap();
        sizes.push(two.reach[0].as_ref().unwrap().last().len());
    }
    outcome(
        sizes[1] >= sizes[0] && sizes[0] > 0,
        format!(
            "final robust reach set of agent 0: {} cells at lambda 0.3, {} at lambda 0.4",
            sizes[0], sizes[1]
        ),
    )
}

fn criterion_8() -> Outcome {
    let setup = example_setup(0.3);
    let ctx = setup.context().with_open_w(true);
    let dec = &setup.dec;
    let cells0: Vec<_> = ExampleSystem::initial_states()
        .iter()
        .map(|p| dec.locate(p).unwrap())
        .collect();
    let near = |i: usize| mas_abstraction::abstraction::cells_within(dec, &[cells0[i]], 0.5);
    let mut systems: Vec<ControlledTs> = vec![];
    for agent in 0..4 {
        let mut slots = vec![near(agent)];
        slots.extend(setup.system.network.neighbors(agent).iter().map(|&j| near(j)));
        let mut configs = ConfigEnumerator::Product(slots).configs(dec.len(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(agent as u64);
        while configs.len() > 600 {
            configs.swap_remove(rng.random_range(0..configs.len()));
        }
        systems.push(
            ctx.build_controlled_ts(agent, &ConfigEnumerator::Explicit(configs))
                .unwrap(),
        );
    }
    let (mut pairs, mut bad) = (0usize, 0usize);
    for ts in &systems {
        for (_, s) in ts.configs() {
            let ConfigStatus::Built { chi_end, classes, .. } = s else {
                continue;
            };
            let mut succ: Vec<_> = classes.iter().map(|a| a.successor).collect();
            succ.sort_unstable();
            succ.dedup();
            if succ.len() != classes.len() {
                bad += 1;
            }
            for a in classes {
                pairs += 1;
                let owners = dec
                    .cells_meeting_ball(&a.target, dec.side(), false)
                    .into_iter()
                    .filter(|&l| dec.cell(l).square().contains(&a.target, 0.0))
                    .count();
                if owners != 1
                    || a.successor != dec.locate(&a.target).unwrap()
                    || linalg::dist(&a.target, chi_end) >= setup.params.r
                {
                    bad += 1;
                }
            }
        }
    }
    outcome(
        pairs > 0 && bad == 0,
        format!("{pairs} (state, action class) pairs over 4 agents, {bad} with other than one successor"),
    )
}

fn criterion_9() -> Outcome {
    let net = box_network();
    let c = PlanningConstants::from_network(&net).unwrap();
    let lambda = 0.3;
    let cap = discretization::dmax_cap(lambda, &c);
    let side = cap / 2f64.sqrt();
    let k = 12.0;
    let dom = Domain::boxed(vec![-0.5 * k * side; 2], vec![0.5 * k * side; 2]).unwrap();
    let dec = CellDecomposition::build_grid(dom.clone(), side).unwrap();
    let params = DiscretizationParams::general_max_dt(lambda, 0.0, &c, dec.d_max(), dom.diameter()).unwrap();
    let ctx = AbstractionContext::new(&net, &params, &dec);
    let mut details = vec![format!("d_max {:.6e} vs cap {cap:.6e}", dec.d_max())];
    let mut pass = true;
    for agent in 0..2 {
        let bounds = discretization::complexity_bounds(&ComplexityInput {
            lambda,
            dim: 2,
            n_agents: net.len(),
            n_neighbors: net.neighbors(agent).len(),
            constants: c,
            domain_volume: dom.volume(),
            d_max: dec.d_max(),
            d_in: dec.d_in(),
        })
        .unwrap();
        let ts = ctx.build_controlled_ts(agent, &ConfigEnumerator::Exhaustive).unwrap();
        if agent == 0 {
            pass &= (dec.len() as f64) <= bounds.state_bound;
            details.push(format!("{} cells <= {:.3e}", dec.len(), bounds.state_bound));
        }
        pass &= ts.edge_count() > 0 && (ts.edge_count() as f64) <= bounds.transition_bound;
        details.push(format!(
            "agent {agent}: {} edges <= {:.3e}",
            ts.edge_count(),
            bounds.transition_bound
        ));
    }
    outcome(pass, details.join("; "))
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(u32, Outcome)> = vec![(1, criterion_1()), (2, criterion_2())];
    let [c3, c4, c10] = criteria_3_4_10();
    results.extend([
        (3, c3),
        (4, c4),
        (5, criterion_5()),
        (6, criterion_6()),
        (7, criterion_7()),
    ]);
    results.extend([(8, criterion_8()), (9, criterion_9()), (10, c10)]);
    let mut failed = 0;
    for (n, o) in &results {
        println!(
            "criterion {n:>2}: {}  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{} of {} criteria pass ({:.1} s)",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
