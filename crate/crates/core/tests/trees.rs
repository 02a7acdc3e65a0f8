//! Tree enumeration and canonical codes checked against Prüfer-sequence
//! enumeration and brute-force permutation isomorphism.

use std::collections::BTreeSet;

use geodeg::trees::{
    canonical_code, enumerate_free_trees, one_step_insertions, ted_one, trees_isomorphic,
    UnorderedTree,
};
use proptest::prelude::*;

fn prufer_decode(seq: &[usize], n: usize) -> UnorderedTree {
    let mut degree = vec![1usize; n];
    for &x in seq {
        degree[x] += 1;
    }
    let mut edges = Vec::new();
    for &x in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
        edges.push((leaf, x));
        degree[leaf] -= 1;
        degree[x] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    UnorderedTree::from_edges(n, &edges).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Isomorphism by trying every relabeling.
fn brute_isomorphic(a: &UnorderedTree, b: &UnorderedTree, perms: &[Vec<usize>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mask: Vec<u32> = (0..b.len())
        .map(|v| b.neighbors(v).iter().fold(0, |m, &w| m | 1 << w))
        .collect();
    let edges = a.edges();
    perms
        .iter()
        .any(|p| edges.iter().all(|&(x, y)| mask[p[x]] >> p[y] & 1 == 1))
}

/// Parenthesis string of the tree rooted at `v`, children sorted as strings.
fn rooted_string(t: &UnorderedTree, v: usize, parent: usize) -> String {
    let mut kids: Vec<String> = t
        .neighbors(v)
        .iter()
        .filter(|&&w| w != parent)
        .map(|&w| rooted_string(t, w, v))
        .collect();
    kids.sort();
    format!("({})", kids.concat())
}

/// Minimum over every choice of root; a canonical form independent of
/// centroids.
fn all_roots_form(t: &UnorderedTree) -> String {
    (0..t.len())
        .map(|r| rooted_string(t, r, usize::MAX))
        .min()
        .unwrap()
}

/// Isomorphism classes of labeled trees on n nodes, one representative each.
fn oracle_classes(n: usize, k: Option<usize>) -> Vec<UnorderedTree> {
    if n == 1 {
        return vec![UnorderedTree::single()];
    }
    if n == 2 {
        return vec![UnorderedTree::path(2)];
    }
    let mut reps = std::collections::BTreeMap::new();
    let total = n.pow((n - 2) as u32);
    for code in 0..total {
        let mut seq = Vec::with_capacity(n - 2);
        let mut c = code;
        for _ in 0..n - 2 {
            seq.push(c % n);
            c /= n;
        }
        let t = prufer_decode(&seq, n);
        if k.is_some_and(|k| t.max_degree() > k) {
            continue;
        }
        reps.entry(all_roots_form(&t)).or_insert(t);
    }
    reps.into_values().collect()
}

#[test]
fn counts_match_prufer_oracle_up_to_eight() {
    let enumerated = enumerate_free_trees(8, None).unwrap();
    let bounded = enumerate_free_trees(8, Some(3)).unwrap();
    for n in 1..=8 {
        assert_eq!(
            enumerated[n - 1].len(),
            oracle_classes(n, None).len(),
            "n={n}"
        );
        assert_eq!(
            bounded[n - 1].len(),
            oracle_classes(n, Some(3)).len(),
            "n={n}"
        );
    }
}

#[test]
fn unbounded_counts_to_ten() {
    let levels = enumerate_free_trees(10, None).unwrap();
    let counts: Vec<usize> = levels.iter().map(Vec::len).collect();
    assert_eq!(counts, vec![1, 1, 1, 2, 3, 6, 11, 23, 47, 106]);
}

#[test]
fn degree_four_counts_to_ten() {
    let levels = enumerate_free_trees(10, Some(4)).unwrap();
    let counts: Vec<usize> = levels.iter().map(Vec::len).collect();
    assert_eq!(counts, vec![1, 1, 1, 2, 3, 5, 9, 18, 35, 75]);
    assert_eq!(counts[1..].iter().sum::<usize>(), 149);
    assert!(levels.iter().flatten().all(|t| t.max_degree() <= 4));
}

#[test]
fn twelve_nodes_is_the_cap() {
    let levels = enumerate_free_trees(12, None).unwrap();
    assert_eq!(levels[11].len(), 551);
}

#[test]
fn code_exactness_against_backtracking() {
    // Equal code iff isomorphic, over every pair of labeled representatives
    // of sizes 5..=7 drawn from a mix of isomorphism classes.
    for n in 5..=7 {
        let perms = permutations(n);
        let classes = oracle_classes(n, None);
        let mut samples = Vec::new();
        for (i, t) in classes.iter().enumerate() {
            samples.push(t.clone());
            samples.push(t.permuted(&perms[(i * 37 + 11) % perms.len()]));
        }
        for a in &samples {
            for b in &samples {
                assert_eq!(
                    canonical_code(a) == canonical_code(b),
                    brute_isomorphic(a, b, &perms)
                );
            }
        }
    }
}

/// Vertex-by-vertex backtracking with degree and adjacency pruning.
fn backtrack_isomorphic(a: &UnorderedTree, b: &UnorderedTree) -> bool {
    fn go(
        a: &UnorderedTree,
        b: &UnorderedTree,
        v: usize,
        map: &mut Vec<usize>,
        used: &mut Vec<bool>,
    ) -> bool {
        if v == a.len() {
            return true;
        }
        for w in 0..b.len() {
            if used[w] || a.degree(v) != b.degree(w) {
                continue;
            }
            let ok =
                (0..v).all(|u| a.neighbors(v).contains(&u) == b.neighbors(w).contains(&map[u]));
            if ok {
                map[v] = w;
                used[w] = true;
                if go(a, b, v + 1, map, used) {
                    return true;
                }
                used[w] = false;
            }
        }
        false
    }
    a.len() == b.len()
        && go(
            a,
            b,
            0,
            &mut vec![usize::MAX; a.len()],
            &mut vec![false; b.len()],
        )
}

#[test]
fn code_exactness_up_to_nine() {
    let levels = enumerate_free_trees(9, None).unwrap();
    for level in &levels {
        let n = level[0].len();
        let shift: Vec<usize> = (0..n).map(|v| (v * 5 + 3) % n).collect();
        let shift = if n % 5 == 0 {
            (0..n).rev().collect()
        } else {
            shift
        };
        let samples: Vec<UnorderedTree> = level
            .iter()
            .flat_map(|t| [t.clone(), t.permuted(&shift)])
            .collect();
        for a in &samples {
            for b in &samples {
                assert_eq!(
                    canonical_code(a) == canonical_code(b),
                    backtrack_isomorphic(a, b)
                );
            }
        }
    }
}

#[test]
fn enumerated_codes_are_distinct_up_to_nine() {
    let levels = enumerate_free_trees(9, None).unwrap();
    for level in &levels {
        let codes: BTreeSet<_> = level.iter().map(canonical_code).collect();
        assert_eq!(codes.len(), level.len());
    }
}

#[test]
fn insertions_match_leaf_removal_inverse() {
    // T' is one insertion above T iff some edge contraction of T' gives T.
    let levels = enumerate_free_trees(8, None).unwrap();
    for n in 1..8 {
        for big in &levels[n] {
            let contractions: BTreeSet<_> = big
                .edges()
                .into_iter()
                .map(|(a, b)| canonical_code(&contract(big, a, b)))
                .collect();
            for small in &levels[n - 1] {
                let forward = one_step_insertions(small, None).contains(&canonical_code(big));
                assert_eq!(forward, contractions.contains(&canonical_code(small)));
                assert_eq!(ted_one(small, big).unwrap(), forward);
            }
        }
    }
}

fn contract(t: &UnorderedTree, a: usize, b: usize) -> UnorderedTree {
    let relabel = |v: usize| {
        let v = if v == b { a } else { v };
        if v > b {
            v - 1
        } else {
            v
        }
    };
    let edges: Vec<_> = t
        .edges()
        .into_iter()
        .filter(|&(x, y)| !((x == a && y == b) || (x == b && y == a)))
        .map(|(x, y)| (relabel(x), relabel(y)))
        .collect();
    UnorderedTree::from_edges(t.len() - 1, &edges).unwrap()
}

fn arb_tree() -> impl Strategy<Value = UnorderedTree> {
    (2usize..=11).prop_flat_map(|n| {
        proptest::collection::vec(0usize..1000, n - 1).prop_map(move |parents| {
            let edges: Vec<_> = parents
                .iter()
                .enumerate()
                .map(|(i, p)| (i + 1, p % (i + 1)))
                .collect();
            UnorderedTree::from_edges(n, &edges).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn code_is_relabeling_invariant(t in arb_tree(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..t.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let moved = t.permuted(&perm);
        prop_assert!(trees_isomorphic(&t, &moved));
        prop_assert_eq!(canonical_code(&t), canonical_code(&moved));
    }

    #[test]
    fn code_round_trips(t in arb_tree()) {
        let code = canonical_code(&t);
        prop_assert_eq!(code.tree_size(), t.len());
        let back = code.to_tree().unwrap();
        prop_assert_eq!(canonical_code(&back), code.clone());
        prop_assert_eq!(geodeg::trees::CanonicalCode::from_hex(&code.to_hex()).unwrap(), code);
    }

    #[test]
    fn insertions_add_one_node(t in arb_tree(), k in 1usize..6) {
        for c in one_step_insertions(&t, Some(k)) {
            let child = c.to_tree().unwrap();
            prop_assert_eq!(child.len(), t.len() + 1);
            prop_assert!(child.max_degree() <= k);
        }
    }
}
