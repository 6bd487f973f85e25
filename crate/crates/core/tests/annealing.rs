use pamc::annealer::action_ladder;
use pamc::seeding::{stream, Role};
use pamc::{
    action, delta_action, generate_twin, init_paths, AnnealSchedule, InitRanges, Interval, Lorenz96, ObservationSet,
    Path, Site, Trajectory, TwinConfig,
};
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn initial_paths_have_zero_action_on_the_standard_twin() {
    let cfg = TwinConfig::lorenz96_d20(0.5);
    let twin = generate_twin(&cfg, 2024).unwrap();
    let model = cfg.model().unwrap();
    let ranges = InitRanges::from_observations(&twin.observations, 20, vec![Interval::new(4.0, 12.0).unwrap()]);
    let paths = init_paths(&twin.observations, &model, cfg.window_steps, 50, &ranges, 2024).unwrap();
    assert_eq!(paths.len(), 50);
    let schedule = AnnealSchedule::default();
    for p in &paths {
        let ladder = action_ladder(p, &twin.observations, &model, &schedule).unwrap();
        assert_eq!(action(p, &twin.observations, &model, 0.0).unwrap().total, 0.0);
        assert!(ladder.iter().all(|a| a.measurement_error <= 1e-12));
        // the pinned components are not a model trajectory, so R_f > 0 costs something
        assert!(ladder[0].model_error > 0.0);
    }
}

#[test]
fn sparse_measurement_times_still_give_zero_measurement_error() {
    let cfg = TwinConfig {
        n_tau: 4,
        ..TwinConfig::lorenz96_d20(0.5)
    };
    let twin = generate_twin(&cfg, 9).unwrap();
    let model = cfg.model().unwrap();
    let ranges = InitRanges::from_observations(&twin.observations, 20, vec![Interval::new(4.0, 12.0).unwrap()]);
    for p in init_paths(&twin.observations, &model, cfg.window_steps, 8, &ranges, 9).unwrap() {
        assert_eq!(action(&p, &twin.observations, &model, 0.0).unwrap().total, 0.0);
    }
}

#[test]
fn delta_action_matches_full_recompute_on_random_triples() {
    let model = Lorenz96::new(5, 0.025).unwrap();
    let mut rng = stream(77, Role::Chain, 0, 0);
    for trial in 0..1000 {
        let n_tau = rng.random_range(1..=4);
        let steps: Vec<usize> = (0..=20).step_by(n_tau).collect();
        let components: Vec<usize> = (0..5).filter(|_| rng.random_bool(0.6)).collect();
        let components = if components.is_empty() { vec![2] } else { components };
        let values = (0..steps.len() * components.len())
            .map(|_| 4.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let obs = ObservationSet::new(steps, components, values, 1.0).unwrap();
        let states = (0..21 * 5)
            .map(|_| 8.17 + 3.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let path = Path::new(
            Trajectory::from_flat(5, states).unwrap(),
            vec![rng.random_range(4.0..12.0)],
        )
        .unwrap();

        let r_f = if trial % 10 == 0 {
            0.0
        } else {
            1.4f64.powi(rng.random_range(0..=55))
        };
        let site = if rng.random_bool(0.05) {
            Site::Param(0)
        } else {
            Site::State {
                step: rng.random_range(0..=20),
                component: rng.random_range(0..5),
            }
        };
        let scale = [1e-3, 0.3, 5.0][rng.random_range(0..3)];
        let new_value = path.get(site) + scale * rng.sample::<f64, _>(StandardNormal);

        let before = action(&path, &obs, &model, r_f).unwrap().total;
        let mut moved = path.clone();
        moved.set(site, new_value);
        let after = action(&moved, &obs, &model, r_f).unwrap().total;
        let delta = delta_action(&path, site, new_value, &obs, &model, r_f).unwrap();
        assert!(
            (delta - (after - before)).abs() <= 1e-10 * before.abs().max(1.0),
            "trial {trial}: {delta} vs {}",
            after - before
        );
    }
}
