//! Brute-force reference for the MPC program.

use std::collections::HashMap;

use evfleet::model::FleetState;

/// Smallest `Σ_l w_l |L(l) − target_l|` over every integer activation
/// sequence for epochs `start..=end` that keeps each cumulative count at or
/// above its minimum and never activates more vehicles than are waiting.
/// `targets[i]` and `weights[i]` belong to epoch `start + i`.
pub fn enumerate_minimum(state: &FleetState, targets: &[f64], weights: &[f64]) -> f64 {
    let start = state.epoch + 1;
    let mut cells = Vec::new();
    for spec in state.specs().specs() {
        for s in 1..spec.subclass_count {
            cells.push((spec.class_index, s));
        }
    }
    let d0: Vec<u32> = cells.iter().map(|&(q, s)| state.cumulative(q, s)).collect();
    let mut search = Search {
        state,
        targets,
        weights,
        start,
        end: start + targets.len() - 1,
        cells,
        memo: HashMap::new(),
    };
    search.best(start, d0)
}

struct Search<'a> {
    state: &'a FleetState,
    targets: &'a [f64],
    weights: &'a [f64],
    start: usize,
    end: usize,
    cells: Vec<(usize, usize)>,
    memo: HashMap<(usize, Vec<u32>), f64>,
}

impl Search<'_> {
    /// `d` holds the cumulative counts through epoch `l − 1`.
    fn best(&mut self, l: usize, d: Vec<u32>) -> f64 {
        if l > self.end {
            return 0.0;
        }
        if let Some(&v) = self.memo.get(&(l, d.clone())) {
            return v;
        }
        let specs = self.state.specs();
        let mut ranges = Vec::with_capacity(self.cells.len());
        for (i, &(q, s)) in self.cells.iter().enumerate() {
            let arrived = if s > 1 { d[i - 1] } else { 0 };
            let waiting = self.state.initial_population(q, s) + arrived - d[i];
            let need = self.state.min_activation().get(q, s, l).saturating_sub(d[i]);
            ranges.push((need, waiting));
        }
        let mut best = f64::INFINITY;
        if ranges.iter().all(|&(lo, hi)| lo <= hi) {
            let mut pick: Vec<u32> = ranges.iter().map(|r| r.0).collect();
            loop {
                let load: f64 = self
                    .cells
                    .iter()
                    .zip(&pick)
                    .map(|(&(q, s), &n)| n as f64 * specs.class(q).pulse[s - 1])
                    .sum();
                let i = l - self.start;
                let cost = self.weights[i] * (load - self.targets[i]).abs();
                let next: Vec<u32> = d.iter().zip(&pick).map(|(a, b)| a + b).collect();
                best = best.min(cost + self.best(l + 1, next));
                // Odometer step over the box of admissible picks.
                let mut k = 0;
                while k < pick.len() {
                    if pick[k] < ranges[k].1 {
                        pick[k] += 1;
                        break;
                    }
                    pick[k] = ranges[k].0;
                    k += 1;
                }
                if k == pick.len() {
                    break;
                }
            }
        }
        self.memo.insert((l, d), best);
        best
    }
}
