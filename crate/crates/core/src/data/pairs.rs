use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::map::Map;

/// Two pixels `(x, y)` and their ordering label.
///
/// `r = +1` means the relative loss should push `d_i` below `d_j`, which is
/// the case when `j` has the larger pseudo-depth (is closer). `r = -1` is the
/// mirror case and `r = 0` means no reliable ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelPair {
    pub i: (usize, usize),
    pub j: (usize, usize),
    pub r: i8,
}

/// Ordering label of `(i, j)` under the convention documented on [`RelPair`].
pub fn order_label(ti: f32, tj: f32, tau: f64) -> i8 {
    let diff = (tj - ti) as f64;
    if diff > tau {
        1
    } else if -diff > tau {
        -1
    } else {
        0
    }
}

/// Draws `k` uniform pairs of distinct pixels and labels them from `teacher`.
pub fn sample_rel_pairs(teacher: &Map, k: usize, tau: f64, seed: u64) -> Vec<RelPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = teacher.height * teacher.width;
    assert!(n >= 2, "need at least two pixels");
    let w = teacher.width;
    (0..k)
        .map(|_| {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let r = order_label(teacher.data[a], teacher.data[b], tau);
            RelPair {
                i: (a % w, a / w),
                j: (b % w, b / w),
                r,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_teacher_gives_no_order() {
        let t = Map::from_fn(8, 8, |_, _| 0.4);
        assert!(sample_rel_pairs(&t, 100, 0.02, 1).iter().all(|p| p.r == 0));
    }

    #[test]
    fn large_gap_is_ordered() {
        assert_eq!(order_label(0.5, 0.2, 0.05), -1);
        assert_eq!(order_label(0.2, 0.5, 0.05), 1);
        assert_eq!(order_label(0.2, 0.22, 0.05), 0);
    }

    #[test]
    fn pairs_are_distinct_and_in_bounds() {
        let t = Map::from_fn(5, 7, |x, y| (x * y) as f32 / 24.0);
        for p in sample_rel_pairs(&t, 500, 0.02, 9) {
            assert_ne!(p.i, p.j);
            assert!(p.i.0 < 7 && p.j.0 < 7 && p.i.1 < 5 && p.j.1 < 5);
        }
    }
}
