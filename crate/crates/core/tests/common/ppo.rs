use mgrl::rl_ppo::{ppo_loss, PolicyNetwork, Transition};
use rand::Rng;

pub fn random_instance<R: Rng>(rng: &mut R) -> (PolicyNetwork, Vec<Transition>) {
    let sizes = match rng.random_range(0..3) {
        0 => vec![2, 1, 2],
        1 => vec![3, 4, 2],
        _ => vec![4, 5, 3, 3],
    };
    let mut net = PolicyNetwork::zeros(sizes.clone()).unwrap();
    for p in net.params_mut() {
        *p = rng.random_range(-0.8..0.8);
    }
    let batch = (0..6)
        .map(|_| {
            let obs: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
            let act: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.5)).collect();
            let fwd = net.forward(&obs).unwrap();
            let lp = mgrl::rl_ppo::gaussian_log_prob(&act, &fwd.mean, net.log_std());
            Transition {
                raw_observation: obs.clone(),
                observation: obs,
                weights: act.clone(),
                raw_action: act,
                reward: 0.0,
                done: false,
                value: 0.0,
                // Spread ratios on both sides of the clip range.
                log_prob: lp + rng.random_range(-0.4..0.4),
                advantage: rng.random_range(-2.0..2.0),
                target: rng.random_range(-1.0..1.0),
            }
        })
        .collect();
    (net, batch)
}

/// Max-norm of the difference relative to the max-norm of the numerical gradient.
pub fn gradient_error(net: &PolicyNetwork, batch: &[Transition]) -> f64 {
    let refs: Vec<&Transition> = batch.iter().collect();
    let (clip, vf, ent) = (0.1, 0.5, 0.01);
    let (_, grad) = ppo_loss(net, &refs, clip, vf, ent).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1e-8;
    #[allow(clippy::needless_range_loop)]
    for i in 0..net.param_count() {
        let mut up = net.clone();
        up.params_mut()[i] += h;
        let mut down = net.clone();
        down.params_mut()[i] -= h;
        let fd = (ppo_loss(&up, &refs, clip, vf, ent).unwrap().0.total
            - ppo_loss(&down, &refs, clip, vf, ent).unwrap().0.total)
            / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs());
        scale = scale.max(fd.abs());
    }
    worst / scale
}
