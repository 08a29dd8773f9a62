use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::Descriptor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub query_index: usize,
    pub train_index: usize,
    pub distance: f32,
}

struct Nearest {
    best: usize,
    d1: f32,
    d2: f32,
}

fn nearest_two(q: &Descriptor, set: &[Descriptor]) -> Nearest {
    let mut n = Nearest { best: usize::MAX, d1: f32::INFINITY, d2: f32::INFINITY };
    for (j, t) in set.iter().enumerate() {
        let d = q.squared_distance(t);
        if d < n.d1 {
            n.d2 = n.d1;
            n.d1 = d;
            n.best = j;
        } else if d < n.d2 {
            n.d2 = d;
        }
    }
    n
}

fn passes_ratio(n: &Nearest, ratio: f32) -> bool {
    // squared distances, so the ratio is squared too
    n.best != usize::MAX && n.d2 > 0.0 && n.d1 < ratio * ratio * n.d2
}

/// Nearest-neighbour matching with Lowe's ratio test applied in both
/// directions plus a mutual-nearest cross-check.
///
/// The result is symmetric: swapping `a` and `b` yields the transposed set.
/// Returns matches ordered by query index.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], ratio: f32) -> Vec<Match> {
    if a.len() < 2 || b.len() < 2 || !(ratio > 0.0 && ratio <= 1.0) {
        return Vec::new();
    }
    let forward: Vec<Nearest> = a.par_iter().map(|q| nearest_two(q, b)).collect();
    let backward: Vec<Nearest> = b.par_iter().map(|q| nearest_two(q, a)).collect();
    forward
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            if !passes_ratio(f, ratio) {
                return None;
            }
            let back = &backward[f.best];
            (back.best == i && passes_ratio(back, ratio)).then(|| Match {
                query_index: i,
                train_index: f.best,
                distance: f.d1.sqrt(),
            })
        })
        .collect()
}

/// One match per line: `query train distance`.
pub fn dump_matches(matches: &[Match]) -> String {
    matches.iter().map(|m| format!("{} {} {:.6}\n", m.query_index, m.train_index, m.distance)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::features::DESCRIPTOR_LEN;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_descriptor(rng: &mut ChaCha8Rng) -> Descriptor {
        let mut v = [0f32; DESCRIPTOR_LEN];
        for x in v.iter_mut() {
            *x = rng.gen_range(0.0..1.0);
        }
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        Descriptor::from_values(v)
    }

    fn perturbed(d: &Descriptor, rng: &mut ChaCha8Rng, amount: f32) -> Descriptor {
        let mut v = *d.values();
        v.iter_mut().for_each(|x| *x = (*x + rng.gen_range(-amount..amount)).max(0.0));
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        Descriptor::from_values(v)
    }

    #[test]
    fn identical_lists_match_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<_> = (0..30).map(|_| random_descriptor(&mut rng)).collect();
        let m = match_descriptors(&a, &a, 0.75);
        assert_eq!(m.len(), 30);
        for (i, mm) in m.iter().enumerate() {
            assert_eq!((mm.query_index, mm.train_index), (i, i));
            assert_eq!(mm.distance, 0.0);
        }
    }

    #[test]
    fn removed_vector_leaves_query_unmatched() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<_> = (0..20).map(|_| random_descriptor(&mut rng)).collect();
        let mut b = a.clone();
        b.remove(7);
        let m = match_descriptors(&a, &b, 0.75);
        assert!(m.iter().all(|mm| mm.query_index != 7));
        assert_eq!(m.len(), 19);
    }

    #[test]
    fn planted_correspondences_are_precise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<_> = (0..200).map(|_| random_descriptor(&mut rng)).collect();
        let mut perm: Vec<usize> = (0..200).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        // b[perm[i]] corresponds to a[i]; add 50 distractors
        let mut b = vec![None; 200];
        for (i, &p) in perm.iter().enumerate() {
            b[p] = Some(perturbed(&a[i], &mut rng, 0.02));
        }
        let mut b: Vec<_> = b.into_iter().map(Option::unwrap).collect();
        b.extend((0..50).map(|_| random_descriptor(&mut rng)));
        let m = match_descriptors(&a, &b, 0.75);
        let correct = m.iter().filter(|mm| perm[mm.query_index] == mm.train_index).count();
        assert!(!m.is_empty());
        assert!(correct as f64 / m.len() as f64 >= 0.9);
    }

    #[test]
    fn short_lists_give_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = vec![random_descriptor(&mut rng)];
        let b: Vec<_> = (0..5).map(|_| random_descriptor(&mut rng)).collect();
        assert!(match_descriptors(&a, &b, 0.75).is_empty());
        assert!(match_descriptors(&b, &a, 0.75).is_empty());
    }

    proptest! {
        #[test]
        fn cross_checked_matching_is_symmetric(seed in 0u64..500, na in 2usize..25, nb in 2usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<_> = (0..na).map(|_| random_descriptor(&mut rng)).collect();
            let mut b: Vec<_> = (0..nb).map(|_| random_descriptor(&mut rng)).collect();
            for i in 0..na.min(nb) / 2 {
                b[i] = perturbed(&a[i], &mut rng, 0.05);
            }
            let ab = match_descriptors(&a, &b, 0.8);
            let mut ba: Vec<(usize, usize)> = match_descriptors(&b, &a, 0.8)
                .iter()
                .map(|m| (m.train_index, m.query_index))
                .collect();
            ba.sort();
            let ab: Vec<(usize, usize)> = ab.iter().map(|m| (m.query_index, m.train_index)).collect();
            prop_assert_eq!(ab, ba);
        }
    }
}
