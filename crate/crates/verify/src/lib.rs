//! Slow, obvious reference implementations used to cross-check the
//! production code. Nothing here shares an algorithm with the code it checks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfl_incentive::core::{CoalitionalGame, Matrix, TrainingConfig};

/// CEA by bisection on the common award level.
pub fn cea_bisection(claims: &[f64], estate: f64) -> Vec<f64> {
    let filled = |l: f64| claims.iter().map(|&c| c.min(l)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, claims.iter().cloned().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if filled(mid) < estate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    claims.iter().map(|&c| c.min(0.5 * (lo + hi))).collect()
}

/// Shapley by averaging marginal contributions over all `n!` player orders.
pub fn shapley_by_orders(game: &CoalitionalGame) -> Vec<f64> {
    let n = game.players();
    let mut phi = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut count = 0.0;
    permute(&mut order, 0, &mut |ord| {
        let mut mask = 0;
        for &i in ord {
            phi[i] += game.value(mask | 1 << i) - game.value(mask);
            mask |= 1 << i;
        }
        count += 1.0;
    });
    phi.iter().map(|v| v / count).collect()
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Minibatch logistic-regression SGD on one unsplit matrix, zero start,
/// same shuffling schedule as the federated trainer, no L2. Returns the
/// weights followed by the bias after every step.
pub fn centralized_sgd(x: &Matrix, y: &[f64], cfg: &TrainingConfig) -> Vec<Vec<f64>> {
    let d = x.cols();
    let mut theta = vec![0.0; d + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut out = Vec::new();
    for _ in 0..cfg.rounds {
        if cfg.shuffle_each_round {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let g: Vec<f64> = batch
                .iter()
                .map(|&r| {
                    let z = x.row(r).iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() + theta[d];
                    (1.0 / (1.0 + (-z).exp()) - y[r]) / batch.len() as f64
                })
                .collect();
            for (j, t) in theta[..d].iter_mut().enumerate() {
                let step: f64 = batch.iter().zip(&g).map(|(&r, gi)| x.get(r, j) * gi).sum();
                *t -= cfg.learning_rate * step;
            }
            theta[d] -= cfg.learning_rate * g.iter().sum::<f64>();
            out.push(theta.clone());
        }
    }
    out
}
