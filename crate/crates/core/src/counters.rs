use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Nonnegative work counters shared by every instrumented component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CounterVector {
    pub chart_symbol_nodes: u64,
    pub chart_packed_nodes: u64,
    pub engine_edges_touched: u64,
    pub saturation_iterations: u64,
    pub speculative_token_steps: u64,
    pub bitset_slots_scanned: u64,
}

impl CounterVector {
    pub const NAMES: [&'static str; 6] = [
        "chart_symbol_nodes",
        "chart_packed_nodes",
        "engine_edges_touched",
        "saturation_iterations",
        "speculative_token_steps",
        "bitset_slots_scanned",
    ];

    pub fn get(&self, name: &str) -> Option<u64> {
        Some(match name {
            "chart_symbol_nodes" => self.chart_symbol_nodes,
            "chart_packed_nodes" => self.chart_packed_nodes,
            "engine_edges_touched" => self.engine_edges_touched,
            "saturation_iterations" => self.saturation_iterations,
            "speculative_token_steps" => self.speculative_token_steps,
            "bitset_slots_scanned" => self.bitset_slots_scanned,
            _ => return None,
        })
    }

    pub fn values(&self) -> [u64; 6] {
        [
            self.chart_symbol_nodes,
            self.chart_packed_nodes,
            self.engine_edges_touched,
            self.saturation_iterations,
            self.speculative_token_steps,
            self.bitset_slots_scanned,
        ]
    }

    /// Componentwise difference; panics if `earlier` exceeds `self` anywhere.
    pub fn since(&self, earlier: &CounterVector) -> CounterVector {
        let a = self.values();
        let b = earlier.values();
        let d: Vec<u64> = a
            .iter()
            .zip(b)
            .map(|(x, y)| x.checked_sub(y).expect("counters are monotone"))
            .collect();
        CounterVector {
            chart_symbol_nodes: d[0],
            chart_packed_nodes: d[1],
            engine_edges_touched: d[2],
            saturation_iterations: d[3],
            speculative_token_steps: d[4],
            bitset_slots_scanned: d[5],
        }
    }
}

impl AddAssign for CounterVector {
    fn add_assign(&mut self, o: CounterVector) {
        self.chart_symbol_nodes += o.chart_symbol_nodes;
        self.chart_packed_nodes += o.chart_packed_nodes;
        self.engine_edges_touched += o.engine_edges_touched;
        self.saturation_iterations += o.saturation_iterations;
        self.speculative_token_steps += o.speculative_token_steps;
        self.bitset_slots_scanned += o.bitset_slots_scanned;
    }
}

impl Add for CounterVector {
    type Output = CounterVector;
    fn add(mut self, o: CounterVector) -> CounterVector {
        self += o;
        self
    }
}

impl std::iter::Sum for CounterVector {
    fn sum<I: Iterator<Item = CounterVector>>(iter: I) -> Self {
        iter.fold(CounterVector::default(), Add::add)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_cover_fields() {
        let c = CounterVector {
            chart_symbol_nodes: 1,
            chart_packed_nodes: 2,
            engine_edges_touched: 3,
            saturation_iterations: 4,
            speculative_token_steps: 5,
            bitset_slots_scanned: 6,
        };
        let by_name: Vec<u64> = CounterVector::NAMES.iter().map(|n| c.get(n).unwrap()).collect();
        assert_eq!(by_name, c.values());
        assert_eq!(c.get("nope"), None);
        assert_eq!((c + c).since(&c), c);
    }
}
