use aov_sim::agents::BaselinePolicy;
use aov_sim::config::SimulationConfig;
use aov_sim::engine::{run_episode, BaselineController, LearnedController, Scenario, Trainer};

fn desk_config() -> SimulationConfig {
    let mut c = SimulationConfig::default();
    c.sim.vehicles = 10;
    c.sim.horizon_slots = 300;
    c.data.categories = 2;
    c.views.count = 4;
    c.views.target_mean_size_bits = 5.0 * 4_000_400.0;
    c.mobility.area_m = [1500.0, 1500.0];
    c.rsu.location = [750.0, 750.0];
    c.rsu.range_m = 1100.0;
    c.agents.gamma = 0.5;
    c.agents.warmup_transitions = 500;
    c.agents.buffer_capacity = 50_000;
    c.agents.actor_lr = 3e-4;
    c.agents.critic_lr = 1e-3;
    c.agents.noise_decay_episodes = 30;
    c.train.eval_every = 0;
    c.train.checkpoint_every = 0;
    c
}

fn evals(config: &SimulationConfig, agents: Option<&[aov_sim::agents::Agent]>, kind: BaselinePolicy) -> Vec<f64> {
    (0..20)
        .map(|k| {
            let tag = format!("accept-eval{k}");
            let scenario = Scenario::build(config, 20250810, &tag).unwrap();
            match agents {
                Some(a) => {
                    let mut c = LearnedController::new(a, 0.0, &scenario);
                    run_episode(&scenario, &mut c).unwrap().0.cr
                }
                None => {
                    let mut c = BaselineController::new(kind, &scenario);
                    run_episode(&scenario, &mut c).unwrap().0.cr
                }
            }
        })
        .collect()
}

fn main() {
    let base = desk_config();
    let random = evals(&base, None, BaselinePolicy::Random);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("random {:.2}", mean(&random));

    for (label, actor_lr, critic_lr, episodes, gamma) in [
        ("a3e-4/c1e-3/60ep/g0.5", 3e-4, 1e-3, 60u32, 0.5),
        ("a3e-4/c3e-3/40ep/g0.5", 3e-4, 3e-3, 40, 0.5),
        ("a3e-4/c1e-3/40ep/g0.2", 3e-4, 1e-3, 40, 0.2),
        ("a2e-4/c1e-3/60ep/g0.5", 2e-4, 1e-3, 60, 0.5),
    ] {
        let mut config = desk_config();
        config.agents.actor_lr = actor_lr;
        config.agents.critic_lr = critic_lr;
        config.agents.gamma = gamma;
        config.agents.noise_decay_episodes = (episodes * 3) / 4;
        let t = std::time::Instant::now();
        let mut trainer = Trainer::new(&config, 20250810).unwrap();
        trainer.train(episodes, None).unwrap();
        let trained = evals(&config, Some(&trainer.agents), BaselinePolicy::Random);
        let wins = trained.iter().zip(&random).filter(|(t, r)| t > r).count();
        println!(
            "{label}: trained {:.2} (wins {}/20) in {:.0}s",
            mean(&trained),
            wins,
            t.elapsed().as_secs_f64()
        );
    }
}
