use aov_sim::agents::BaselinePolicy;
use aov_sim::config::SimulationConfig;
use aov_sim::engine::{run_episode, BaselineController, Scenario};

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
    c
}

fn main() {
    for bandwidth in [1e6, 3e6, 5e6] {
        let mut config = desk_config();
        config.rsu.bandwidth_hz = bandwidth;
        let mut cr = 0.0;
        let mut chi = 0.0;
        let mut th = 0.0;
        let mut xi = 0.0;
        let mut sr = 0.0;
        let reps = 5;
        for rep in 0..reps {
            let tag = format!("probe-rep{rep}");
            let scenario = Scenario::build(&config, 99, &tag).unwrap();
            let mut controller = BaselineController::new(BaselinePolicy::GreedySensing, &scenario);
            let (m, record) = run_episode(&scenario, &mut controller).unwrap();
            cr += m.cr;
            sr += m.sr;
            let n = record.view_rows.len() as f64;
            chi += record.view_rows.iter().map(|v| v.score.chi).sum::<f64>() / n;
            th += record.view_rows.iter().map(|v| v.score.theta_hat).sum::<f64>() / n;
            xi += record.view_rows.iter().map(|v| v.score.xi_hat).sum::<f64>() / n;
        }
        let k = reps as f64;
        println!(
            "b={:.0e}: CR {:.1} | mean chi {:.3} theta_hat {:.3} xi_hat {:.3} SR {:.3}",
            bandwidth, cr / k, chi / k, th / k, xi / k, sr / k
        );
    }
}
