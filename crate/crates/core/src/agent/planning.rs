use crate::envsim::{Action, Cell, GridWorld};

use super::{shaped_reward, Policy, ShapingModel};

/// Finite-horizon value iteration on the environment reward alone, over
/// the world's episode step limit. Returns the optimal undiscounted return
/// from every cell (the goal itself is 0).
pub fn value_iteration(world: &GridWorld) -> Vec<f64> {
    let n = world.num_cells();
    let open = world.open_cells();
    let mut v = vec![0.0; n];
    for _ in 0..world.max_episode_steps() {
        let mut next = vec![0.0; n];
        for &c in &open {
            if c == world.goal() {
                continue;
            }
            next[world.index(c)] = Action::ALL
                .iter()
                .map(|&a| {
                    let s = world.move_from(c, a);
                    let tail = if s == world.goal() { 0.0 } else { v[world.index(s)] };
                    world.reward_for(s) + tail
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        v = next;
    }
    v
}

/// Best achievable environment return from the start cell.
pub fn optimal_return(world: &GridWorld) -> f64 {
    value_iteration(world)[world.index(world.start())]
}

const PLAN_SWEEPS: usize = 20_000;
const PLAN_TOLERANCE: f64 = 1e-9;

/// Discounted value iteration on the shaped reward with the model's current
/// weights. The goal is terminal, and the step limit is ignored, matching
/// the bootstrapped TD targets. Returns the converged action values.
pub fn plan_shaped(world: &GridWorld, model: &ShapingModel, discount: f64) -> Policy {
    let open: Vec<Cell> = world.open_cells().into_iter().filter(|&c| c != world.goal()).collect();
    let moves: Vec<[(usize, f64, bool); 4]> = open
        .iter()
        .map(|&c| {
            Action::ALL.map(|a| {
                let s = world.move_from(c, a);
                (world.index(s), shaped_reward(c, a, s, world.reward_for(s), model), s == world.goal())
            })
        })
        .collect();
    let mut policy = Policy::zeros(world);
    let mut v = vec![0.0; world.num_cells()];
    for _ in 0..PLAN_SWEEPS {
        let mut delta: f64 = 0.0;
        for (&c, m) in open.iter().zip(&moves) {
            let i = world.index(c);
            let row = m.map(|(s, r, terminal)| if terminal { r } else { r + discount * v[s] });
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[i]).abs());
            v[i] = best;
            policy.q[i] = row;
        }
        if delta <= PLAN_TOLERANCE * (1.0 + v.iter().fold(0.0f64, |a, x| a.max(x.abs()))) {
            break;
        }
    }
    policy
}

/// Environment return of one greedy rollout from `start`.
pub fn greedy_return(world: &GridWorld, policy: &Policy, start: Cell) -> f64 {
    let mut state = world.reset_at(start);
    let mut total = 0.0;
    while !state.done {
        let t = world.step(&state, policy.greedy(state.cell)).expect("episode is live");
        total += t.reward;
        state = t.next;
    }
    total
}
