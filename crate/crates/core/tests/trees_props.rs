use std::collections::BTreeSet;

use hardsphere::trees::{count_trees, enumerate_trees, produced_copies, Provenance};
use hardsphere::Tree;
use proptest::prelude::*;

/// Trees with `n` in 1..=4 and `m` in 0..=4, each index in its allowed range.
fn tree() -> impl Strategy<Value = Tree> {
    (1usize..=4, 0usize..=4)
        .prop_flat_map(|(n, m)| {
            let ranges: Vec<_> = (1..=m).map(|k| 1..=n + k - 1).collect();
            (Just(n), ranges)
        })
        .prop_map(|(n, js)| Tree::new(n, js).unwrap())
}

proptest! {
    #[test]
    fn display_round_trips(t in tree()) {
        let back: Tree = t.to_string().parse().unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn rewrites_stay_in_the_tree_space(t in tree()) {
        prop_assume!(t.n() >= 2);
        let ell = t.ell();
        prop_assert!(ell >= 1 && ell <= t.m() + 1);
        if ell == t.m() + 1 {
            let d = t.discard_trivial().unwrap();
            prop_assert_eq!((d.n(), d.m()), (t.n() - 1, t.m()));
        } else {
            prop_assert!(t.discard_trivial().is_err());
        }
        let n = t.n() - 1;
        let mut attached = 0;
        for k in 1..=ell {
            for i in 1..=n + k - 1 {
                let a = t.attach(k, i).unwrap();
                prop_assert_eq!((a.n(), a.m()), (n, t.m() + 1));
                prop_assert_eq!(a.j(k), i);
                attached += 1;
            }
            prop_assert!(t.attach(k, n + k).is_err());
        }
        prop_assert_eq!(t.rewrite_term_count(), attached + 1);
    }
}

#[test]
fn enumeration_is_sorted_and_unique() {
    for n in 1..=4 {
        for m in 0..=4 {
            let all = enumerate_trees(n, m, u128::MAX).unwrap();
            assert!(all.windows(2).all(|w| w[0].js() < w[1].js()));
            assert_eq!(all.iter().collect::<BTreeSet<_>>().len() as u128, count_trees(n, m));
        }
    }
}

#[test]
fn enumeration_cap_is_enforced() {
    assert!(enumerate_trees(3, 8, 1000).is_err());
    assert_eq!(count_trees(2, 3), 24);
}

/// Every target is produced `N - n` times; the discard term alone accounts for
/// `N - n - m` when it applies and each attachment for one more.
#[test]
fn produced_copies_breakdown() {
    let target = Tree::new(1, vec![1, 2]).unwrap();
    let (copies, prov) = produced_copies(&target, 5).unwrap();
    assert_eq!(copies, 4);
    let discard: usize = prov.iter().filter(|p| matches!(p, Provenance::Discard { .. })).map(Provenance::multiplicity).sum();
    assert_eq!(discard, 2);
    assert_eq!(prov.len(), 3);
}
