use geodeg::meta_grammar::{
    applicable_sites, apply_rule, build_meta_rules, derive_children, rule_count,
    verify_degree_coverage, verify_edit_complete, verify_minimal, verify_operation_complete,
    MetaRule,
};
use geodeg::trees::{one_step_insertions, UnorderedTree};
use proptest::prelude::*;

#[test]
fn closed_form_and_nesting() {
    for k in 1..=8 {
        let rules = build_meta_rules(k).unwrap();
        assert_eq!(rules.len(), rule_count(k));
        if k > 1 {
            let lower = build_meta_rules(k - 1).unwrap();
            for id in lower.ids() {
                assert!(rules.get(id).is_some(), "{id} missing at k={k}");
            }
        }
    }
    assert_eq!(rule_count(4), 8);
}

#[test]
fn full_grammar_passes_at_eight() {
    let rules = build_meta_rules(4).unwrap();
    assert!(verify_degree_coverage(&rules, 8).unwrap().pass);
    assert!(verify_edit_complete(&rules, 8).unwrap().pass);
    assert!(verify_operation_complete(&rules, 8).unwrap().pass);
}

#[test]
fn degree_two_covers_paths() {
    let rules = build_meta_rules(2).unwrap();
    let report = verify_degree_coverage(&rules, 5).unwrap();
    assert!(report.pass);
    assert!(verify_minimal(&rules, 5).unwrap().pass);
}

#[test]
fn missing_extend_rule_loses_degree_four() {
    let rules = build_meta_rules(4).unwrap().without(&["p0_4"]).unwrap();
    let report = verify_degree_coverage(&rules, 6).unwrap();
    assert!(!report.pass);
    assert!(!report.missing.is_empty());
    for code in &report.missing {
        assert_eq!(code.to_tree().unwrap().max_degree(), 4);
    }
}

#[test]
fn ablation_breaks_edit_completeness() {
    let rules = build_meta_rules(4).unwrap().without(&["p1_4", "p2_4"]).unwrap();
    let report = verify_edit_complete(&rules, 6).unwrap();
    assert!(!report.pass);
    // K1,4 cannot reach the double star whose centers both have degree 3.
    let k14 = UnorderedTree::star(4).canonical_code();
    let double_star = UnorderedTree::from_edges(6, &[(0, 1), (0, 2), (0, 3), (1, 4), (1, 5)])
        .unwrap()
        .canonical_code();
    assert!(report
        .witnesses
        .iter()
        .any(|w| w.from == k14 && w.to == double_star));
    for w in &report.witnesses {
        assert_eq!(w.from.to_tree().unwrap().max_degree(), 4);
    }
}

#[test]
fn minimality() {
    let rules = build_meta_rules(4).unwrap();
    let report = verify_minimal(&rules, 7).unwrap();
    assert!(report.pass, "{:?}", report.redundant);
    assert!(report.redundant.is_empty());

    let doubled = rules.with_rule(MetaRule::split(4, 2));
    let report = verify_minimal(&doubled, 7).unwrap();
    assert!(!report.pass);
    assert_eq!(report.redundant, vec!["p2_4".to_string()]);
}

#[test]
fn split_rules_only_needed_operationally() {
    // Every child of p1_2 is also a child of p0_2 on some other site, so
    // pair-level edit-completeness survives its removal; the operation
    // check does not.
    let rules = build_meta_rules(4).unwrap().without(&["p1_2"]).unwrap();
    assert!(verify_degree_coverage(&rules, 7).unwrap().pass);
    assert!(verify_edit_complete(&rules, 7).unwrap().pass);
    assert!(!verify_operation_complete(&rules, 7).unwrap().pass);
}

fn arb_tree() -> impl Strategy<Value = UnorderedTree> {
    (1usize..=9).prop_flat_map(|n| {
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
    fn productions_are_bounded_insertions(t in arb_tree(), k in 1usize..=5) {
        let rules = build_meta_rules(k).unwrap();
        let insertions = one_step_insertions(&t, Some(k));
        for (r, _site, child) in derive_children(&rules, &t) {
            let rule = &rules.rules[r];
            prop_assert_eq!(child.len(), t.len() + 1);
            prop_assert!(child.max_degree() <= t.max_degree().max(rule.lhs_anchor_count + 1));
            if t.max_degree() <= k {
                prop_assert!(child.max_degree() <= k);
                prop_assert!(insertions.contains(&child.canonical_code()));
            }
        }
    }

    #[test]
    fn sites_are_valid(t in arb_tree()) {
        for rule in build_meta_rules(5).unwrap().rules {
            for site in applicable_sites(&rule, &t) {
                prop_assert_eq!(site.moved_neighbors.len(), rule.split);
                prop_assert!(apply_rule(&rule, &t, &site).is_ok());
            }
        }
    }
}
