use dyqn::agent::{q_m, target_or, AgentConfig, DyqnAgent};
use dyqn::env::VignetteEnv;
use dyqn::nn::QNetwork;
use dyqn::types::{AgentAction, Dataset};
use rand::SeedableRng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let net = QNetwork::load_checkpoint(std::path::Path::new(&args[1])).unwrap();
    let dataset = Dataset::load_json(std::path::Path::new(&args[2])).unwrap();
    let skip: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let agent = DyqnAgent::new(net, AgentConfig::default());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    // Follow the greedy policy; report ask undershoot at the stop step.
    let mut stops_at = [0usize; 24];
    let mut undershoot_sum = 0.0;
    let mut n = 0;
    for vignette in dataset.vignettes.iter().skip(skip).take(60) {
        let mut env = VignetteEnv::new(dataset.evidence_space(), 23);
        let mut state = env.reset(vignette, &mut rng).unwrap();
        loop {
            let q = agent.qvalues(&state).unwrap();
            let action = dyqn::agent::select_action(&q, 0.0, !env.force_triage(), &mut rng);
            let out = env.step(action, &mut rng).unwrap();
            if out.done {
                let tq = q_m(&q, None).unwrap();
                // One-step OR target using the counterfactual next state.
                let target = target_or(tq, tq).unwrap();
                undershoot_sum += target - q[4];
                n += 1;
                stops_at[env.questions_asked().min(23)] += 1;
                break;
            }
            state = out.next_state;
        }
    }
    println!("stop histogram (questions asked): {:?}", &stops_at[..10]);
    println!("mean (or_target - ask_q) at stop: {:.4}", undershoot_sum / n as f64);
}
