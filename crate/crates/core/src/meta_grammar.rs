//! The k-degree meta grammar: production rules over non-terminal-only trees,
//! built inductively, plus brute-force checks of coverage, edit-completeness
//! and minimality at bounded tree size.
//!
//! Rules are fully described by three integers, so applying one is a local
//! rewrite of an [`UnorderedTree`]:
//!
//! * `p0_1` (start) turns the start symbol into an edge.
//! * `p0_k` (extend) hangs a new leaf off a node of degree `k - 1`.
//! * `pi_k` (split) inserts a node `v'` next to a degree-`k` node `v` and
//!   hands `i` of the neighbors of `v` over to `v'`.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::build_meta_geometry;
use crate::trees::{enumerate_free_trees, one_step_insertions, CanonicalCode, UnorderedTree};

/// Largest supported grammar degree.
pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("grammar degree {0} outside 1..={MAX_DEGREE}")]
    DegreeOutOfRange(usize),
    #[error("unknown rule id {0:?}")]
    UnknownRule(String),
    #[error("rule {rule} cannot apply at node {node}: {reason}")]
    InvalidSite {
        rule: String,
        node: usize,
        reason: &'static str,
    },
    #[error("n_max {got} outside 1..={max} for {check}")]
    SizeOutOfRange {
        check: &'static str,
        got: usize,
        max: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Start,
    Extend,
    Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaRule {
    pub id: String,
    pub kind: RuleKind,
    /// Degree of the matched non-terminal.
    pub lhs_anchor_count: usize,
    /// Number of neighbors handed to the new node.
    pub split: usize,
}

impl MetaRule {
    pub fn start() -> Self {
        Self {
            id: "p0_1".into(),
            kind: RuleKind::Start,
            lhs_anchor_count: 0,
            split: 0,
        }
    }

    /// `p0_level`: attach a leaf to a node of degree `level - 1`.
    pub fn extend(level: usize) -> Self {
        assert!(level >= 2, "extend rules start at level 2");
        Self {
            id: format!("p0_{level}"),
            kind: RuleKind::Extend,
            lhs_anchor_count: level - 1,
            split: 0,
        }
    }

    /// `p{moved}_level`: split a degree-`level` node.
    pub fn split(level: usize, moved: usize) -> Self {
        assert!(
            moved >= 1 && moved <= level / 2,
            "split must satisfy 1 <= i <= level/2"
        );
        Self {
            id: format!("p{moved}_{level}"),
            kind: RuleKind::Split,
            lhs_anchor_count: level,
            split: moved,
        }
    }

    /// The `k` of the inductive step that introduced this rule.
    pub fn level(&self) -> usize {
        match self.kind {
            RuleKind::Start => 1,
            RuleKind::Extend => self.lhs_anchor_count + 1,
            RuleKind::Split => self.lhs_anchor_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaRuleSet {
    pub k: usize,
    pub rules: Vec<MetaRule>,
}

/// Closed-form rule count `1 + sum_{j=2..k} (1 + floor(j/2))`.
pub fn rule_count(k: usize) -> usize {
    1 + (2..=k).map(|j| 1 + j / 2).sum::<usize>()
}

pub fn build_meta_rules(k: usize) -> Result<MetaRuleSet, GrammarError> {
    if !(1..=MAX_DEGREE).contains(&k) {
        return Err(GrammarError::DegreeOutOfRange(k));
    }
    let mut rules = vec![MetaRule::start()];
    for level in 2..=k {
        rules.push(MetaRule::extend(level));
        rules.extend((1..=level / 2).map(|i| MetaRule::split(level, i)));
    }
    Ok(MetaRuleSet { k, rules })
}

impl MetaRuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.rules.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&MetaRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Copy without the listed rules; every id must exist.
    pub fn without(&self, ids: &[&str]) -> Result<Self, GrammarError> {
        if let Some(bad) = ids.iter().find(|id| self.get(id).is_none()) {
            return Err(GrammarError::UnknownRule((*bad).to_string()));
        }
        Ok(Self {
            k: self.k,
            rules: self
                .rules
                .iter()
                .filter(|r| !ids.contains(&r.id.as_str()))
                .cloned()
                .collect(),
        })
    }

    pub fn with_rule(&self, rule: MetaRule) -> Self {
        let mut out = self.clone();
        out.rules.push(rule);
        out
    }

    fn without_index(&self, index: usize) -> Self {
        let mut out = self.clone();
        out.rules.remove(index);
        out
    }
}

/// Where a rule matches: the rewritten node and, for split rules, the
/// neighbors that move to the new node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApplicationSite {
    pub node: usize,
    pub moved_neighbors: Vec<usize>,
}

/// The single-node tree plays the start symbol.
fn is_start_symbol(t: &UnorderedTree) -> bool {
    t.len() == 1
}

pub fn applicable_sites(rule: &MetaRule, t: &UnorderedTree) -> Vec<ApplicationSite> {
    match rule.kind {
        RuleKind::Start => {
            if is_start_symbol(t) {
                vec![ApplicationSite {
                    node: 0,
                    moved_neighbors: Vec::new(),
                }]
            } else {
                Vec::new()
            }
        }
        RuleKind::Extend => (0..t.len())
            .filter(|&v| t.degree(v) == rule.lhs_anchor_count)
            .map(|node| ApplicationSite {
                node,
                moved_neighbors: Vec::new(),
            })
            .collect(),
        RuleKind::Split => (0..t.len())
            .filter(|&v| t.degree(v) == rule.lhs_anchor_count)
            .flat_map(|node| {
                t.neighbors(node)
                    .iter()
                    .copied()
                    .combinations(rule.split)
                    .map(move |moved_neighbors| ApplicationSite {
                        node,
                        moved_neighbors,
                    })
            })
            .collect(),
    }
}

pub fn apply_rule(
    rule: &MetaRule,
    t: &UnorderedTree,
    site: &ApplicationSite,
) -> Result<UnorderedTree, GrammarError> {
    let invalid = |reason| GrammarError::InvalidSite {
        rule: rule.id.clone(),
        node: site.node,
        reason,
    };
    if site.node >= t.len() {
        return Err(invalid("node out of range"));
    }
    match rule.kind {
        RuleKind::Start if !is_start_symbol(t) => return Err(invalid("not the start symbol")),
        RuleKind::Extend | RuleKind::Split if t.degree(site.node) != rule.lhs_anchor_count => {
            return Err(invalid("degree does not match the rule"))
        }
        _ => {}
    }
    if site.moved_neighbors.len() != rule.split {
        return Err(invalid("wrong number of moved neighbors"));
    }
    let distinct: BTreeSet<_> = site.moved_neighbors.iter().collect();
    if distinct.len() != site.moved_neighbors.len()
        || site
            .moved_neighbors
            .iter()
            .any(|w| !t.neighbors(site.node).contains(w))
    {
        return Err(invalid("moved nodes are not distinct neighbors"));
    }
    Ok(t.with_insertion(site.node, &site.moved_neighbors))
}

/// Every child of `t` under `rules`, as `(rule index, site, child)`.
pub fn derive_children(
    rules: &MetaRuleSet,
    t: &UnorderedTree,
) -> Vec<(usize, ApplicationSite, UnorderedTree)> {
    let mut out = Vec::new();
    for (r, rule) in rules.rules.iter().enumerate() {
        for site in applicable_sites(rule, t) {
            let child = apply_rule(rule, t, &site).expect("enumerated sites are valid");
            out.push((r, site, child));
        }
    }
    out
}

/// A pair of trees violating a property, as canonical codes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Witness {
    pub from: CanonicalCode,
    pub to: CanonicalCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    pub pass: bool,
    pub k: usize,
    pub n_max: usize,
    /// Degree-bounded trees never derived from the start symbol.
    pub missing: Vec<CanonicalCode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EditCompleteReport {
    pub pass: bool,
    pub k: usize,
    pub n_max: usize,
    pub witnesses: Vec<Witness>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleNecessity {
    pub id: String,
    pub coverage_fails: bool,
    pub edit_complete_fails: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MinimalityReport {
    pub pass: bool,
    pub k: usize,
    pub n_max: usize,
    pub redundant: Vec<String>,
    pub per_rule: Vec<RuleNecessity>,
}

fn check_size(check: &'static str, n_max: usize, max: usize) -> Result<(), GrammarError> {
    if n_max == 0 || n_max > max {
        return Err(GrammarError::SizeOutOfRange {
            check,
            got: n_max,
            max,
        });
    }
    Ok(())
}

/// Derivable trees up to `n_max`, keyed by code.
fn derivable(rules: &MetaRuleSet, n_max: usize) -> BTreeMap<CanonicalCode, UnorderedTree> {
    let geo = build_meta_geometry(rules, n_max).expect("size checked by caller");
    geo.meta_nodes()
        .map(|n| {
            let code = n.canonical.clone().expect("meta nodes carry codes");
            let tree = code.to_tree().expect("stored codes decode");
            (code, tree)
        })
        .collect()
}

/// Every tree with maximum degree at most `rules.k` and size at most
/// `n_max` is derivable from the start symbol.
pub fn verify_degree_coverage(
    rules: &MetaRuleSet,
    n_max: usize,
) -> Result<CoverageReport, GrammarError> {
    check_size("degree coverage", n_max, 10)?;
    let reached = derivable(rules, n_max);
    let missing: Vec<CanonicalCode> = enumerate_free_trees(n_max, Some(rules.k))
        .expect("size checked")
        .into_iter()
        .flatten()
        .map(|t| t.canonical_code())
        .filter(|c| !reached.contains_key(c))
        .collect();
    Ok(CoverageReport {
        pass: missing.is_empty(),
        k: rules.k,
        n_max,
        missing,
    })
}

/// Pair-level edit-completeness: whenever derivable trees `T` and `T'`
/// satisfy `|T'| = |T| + 1` and TED 1, one rule application turns `T` into
/// `T'`.
pub fn verify_edit_complete(
    rules: &MetaRuleSet,
    n_max: usize,
) -> Result<EditCompleteReport, GrammarError> {
    check_size("edit completeness", n_max, 9)?;
    let reached = derivable(rules, n_max);
    let mut witnesses = Vec::new();
    for (code, t) in &reached {
        if t.len() >= n_max {
            continue;
        }
        let produced: BTreeSet<CanonicalCode> = derive_children(rules, t)
            .into_iter()
            .map(|(_, _, c)| c.canonical_code())
            .collect();
        for target in one_step_insertions(t, None) {
            if reached.contains_key(&target) && !produced.contains(&target) {
                witnesses.push(Witness {
                    from: code.clone(),
                    to: target,
                });
            }
        }
    }
    Ok(EditCompleteReport {
        pass: witnesses.is_empty(),
        k: rules.k,
        n_max,
        witnesses,
    })
}

/// Operation-level edit-completeness: every single insertion on a derivable
/// tree that respects the degree bound (choose `v`, move `S` of its
/// neighbors to the new node) is performed by some rule at `v`, up to
/// swapping the roles of `v` and the new node (moving `S` or its complement
/// gives the same labeled tree).
pub fn verify_operation_complete(
    rules: &MetaRuleSet,
    n_max: usize,
) -> Result<EditCompleteReport, GrammarError> {
    check_size("operation completeness", n_max, 9)?;
    let reached = derivable(rules, n_max);
    let mut witnesses = BTreeSet::new();
    for (code, t) in &reached {
        if t.len() >= n_max {
            continue;
        }
        let mut realized: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
        for (_, site, _) in derive_children(rules, t) {
            let all = t.neighbors(site.node);
            let complement: Vec<usize> = all
                .iter()
                .copied()
                .filter(|w| !site.moved_neighbors.contains(w))
                .collect();
            let mut moved = site.moved_neighbors.clone();
            moved.sort_unstable();
            realized.insert((site.node, moved));
            realized.insert((site.node, complement));
        }
        for v in 0..t.len() {
            let nbrs = t.neighbors(v);
            let d = nbrs.len();
            for size in 0..=d {
                // Degrees after the insertion: v has d - size + 1, the new
                // node has size + 1.
                if (d - size + 1).max(size + 1) > rules.k {
                    continue;
                }
                for moved in nbrs.iter().copied().combinations(size) {
                    if !realized.contains(&(v, moved.clone())) {
                        witnesses.insert(Witness {
                            from: code.clone(),
                            to: t.with_insertion(v, &moved).canonical_code(),
                        });
                    }
                }
            }
        }
    }
    Ok(EditCompleteReport {
        pass: witnesses.is_empty(),
        k: rules.k,
        n_max,
        witnesses: witnesses.into_iter().collect(),
    })
}

/// Each rule is necessary: dropping it breaks degree coverage or
/// operation-level edit-completeness up to `n_max`. A pass means "verified
/// up to `n_max`".
pub fn verify_minimal(
    rules: &MetaRuleSet,
    n_max: usize,
) -> Result<MinimalityReport, GrammarError> {
    check_size("minimality", n_max, 8)?;
    let per_rule: Vec<RuleNecessity> = (0..rules.len())
        .map(|i| {
            let reduced = rules.without_index(i);
            RuleNecessity {
                id: rules.rules[i].id.clone(),
                coverage_fails: !verify_degree_coverage(&reduced, n_max)
                    .expect("size checked")
                    .pass,
                edit_complete_fails: !verify_operation_complete(&reduced, n_max)
                    .expect("size checked")
                    .pass,
            }
        })
        .collect();
    let redundant: Vec<String> = per_rule
        .iter()
        .filter(|r| !r.coverage_fails && !r.edit_complete_fails)
        .map(|r| r.id.clone())
        .unique()
        .collect();
    Ok(MinimalityReport {
        pass: redundant.is_empty(),
        k: rules.k,
        n_max,
        redundant,
        per_rule,
    })
}
