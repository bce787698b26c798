use aov_sim::config::SimulationConfig;
use aov_sim::engine::Trainer;

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

fn main() {
    let c = desk_config();
    let mut trainer = Trainer::new(&c, 1).unwrap();
    for k in 0..3 {
        let t = std::time::Instant::now();
        let (curves, _) = trainer.train(1, None).unwrap();
        let loss: Vec<String> = curves
            .iter()
            .filter(|r| r.agent < 2)
            .map(|r| format!("a{} loss {:?} r {:.3}", r.agent, r.critic_loss.map(|l| (l * 1e4).round() / 1e4), r.mean_reward))
            .collect();
        println!("episode {k}: {:.1}s | {}", t.elapsed().as_secs_f64(), loss.join(" | "));
    }
}
