//! Deterministic inputs for the benchmarks.

use spt_core::eval::{make_scene, SceneConfig};
use spt_core::mrf::{MrfProblem, PairwiseTerm};
use spt_core::Image;

/// Small deterministic generator so inputs do not depend on an RNG crate.
struct SplitMix(u64);

impl SplitMix {
    fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// 4-connected `side × side` grid with random unaries and weights in `[0, 1)`.
pub fn grid_problem(side: usize, seed: u64) -> MrfProblem {
    let mut rng = SplitMix(seed);
    let unary = (0..side * side).map(|_| [rng.next_f64(), rng.next_f64()]).collect();
    let mut edges = Vec::with_capacity(2 * side * side);
    for y in 0..side {
        for x in 0..side {
            let i = y * side + x;
            if x + 1 < side {
                edges.push(PairwiseTerm { i, j: i + 1, weight: 0.5 * rng.next_f64() });
            }
            if y + 1 < side {
                edges.push(PairwiseTerm { i, j: i + side, weight: 0.5 * rng.next_f64() });
            }
        }
    }
    MrfProblem::new(unary, edges).expect("non-negative weights on a valid grid")
}

/// Antisymmetric `n × n` entailment scores in `(-1, 1)`.
pub fn score_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix(seed);
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = 2.0 * rng.next_f64() - 1.0;
            m[i][j] = s;
            m[j][i] = -s;
        }
    }
    m
}

pub fn scene_image(size: usize, seed: u64) -> Image {
    let cfg = SceneConfig {
        width: size,
        height: size,
        seed,
        ..SceneConfig::default()
    };
    make_scene(&cfg).expect("default scene parameters are valid").image
}
