use routewatch::cq::*;
use routewatch::policy::*;
use routewatch::scenario::ScenarioConfig;
use routewatch::sim::*;

fn scenario(radius: f64, reward_block: &str) -> ScenarioConfig {
    let toml = format!(r#"
n = 8
t_max = 500
seed = 2024
comm_radius = {radius}
[area]
width = 360.0
height = 360.0
[mobility]
mean_speed = 5.0
memory = 0.8
sigma_speed = 1.0
sigma_heading = 0.35
[traffic]
random_flows = 2
rate = 0.2
[randomize]
mean_speed = [3.0, 8.0]
area_scale = [0.85, 1.2]
rate_scale = [0.6, 1.4]
{reward_block}
"#);
    ScenarioConfig::from_toml_str(&toml).unwrap()
}

#[test]
fn diag_variants() {
    let variants: Vec<(f64, &str, &str)> = vec![
        (190.0, "", "r190 default-w"),
        (170.0, "[reward]\nw1 = 0.5\nw2 = 0.2\nw3 = 1.0\nw4 = 10.0", "r170 delivery-w"),
        (190.0, "[reward]\nw1 = 0.5\nw2 = 0.2\nw3 = 1.0\nw4 = 10.0", "r190 delivery-w"),
    ];
    for (radius, rblock, name) in variants {
        let sc = scenario(radius, rblock);
        let tc = TrainerConfig { iterations: 50, episodes_per_iter: 8, hp: PpoHyperparams::default(), seed: 2024 };
        let out = train(&sc, &tc).unwrap();
        let greedy = evaluate_policy(&sc, Some(&out.actor), 20, 2024, phase::EVAL);
        let random = evaluate_policy(&sc, None, 20, 2024, phase::EVAL);
        eprintln!("{name}: trained {:.3} random {:.3} gap {:.3}", greedy.mean_delivery_ratio, random.mean_delivery_ratio, greedy.mean_delivery_ratio - random.mean_delivery_ratio);
    }
    panic!("diag done");
}
