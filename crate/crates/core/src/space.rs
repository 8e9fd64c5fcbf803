//! Tunable parameters, constraints and the set of valid configurations.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use once_cell::race::OnceBox;
use rand::Rng;

use crate::expr::{Expr, ExprError};

/// Spaces whose raw Cartesian size exceeds this refuse explicit enumeration.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

const REJECTION_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpaceError {
    #[error("parameter `{0}` already exists")]
    DuplicateParameter(String),
    #[error("parameter `{0}` has no values")]
    EmptyValueList(String),
    #[error("parameter `{0}` lists value {1} more than once")]
    DuplicateValue(String, u64),
    #[error("`{0}` is not a valid parameter name")]
    InvalidName(String),
    #[error("labels for `{0}` do not match its values")]
    LabelMismatch(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("configuration violates the space's constraints")]
    InvalidConfiguration,
    #[error("requested {requested} configurations but only {available} are valid")]
    BudgetExceedsSpace { requested: u64, available: u64 },
    #[error("raw space size {0} is too large to enumerate explicitly")]
    ExplicitEnumerationTooLarge(u128),
    #[error("the space has no valid configuration")]
    EmptySpace,
    #[error("space has no parameters")]
    NoParameters,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parameter {
    pub name: String,
    pub values: Vec<u64>,
    pub labels: Option<Vec<String>>,
}

impl Parameter {
    pub fn index_of(&self, value: u64) -> Option<usize> {
        self.values.iter().position(|&v| v == value)
    }

    /// Display label for `value`, falling back to the number.
    pub fn label(&self, value: u64) -> String {
        match (&self.labels, self.index_of(value)) {
            (Some(labels), Some(i)) => labels[i].clone(),
            _ => value.to_string(),
        }
    }
}

/// One value per parameter, in the owning space's parameter order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Configuration(pub Vec<u64>);

impl Configuration {
    pub fn values(&self) -> &[u64] {
        &self.0
    }
}

/// Opaque predicate over a configuration's values.
pub type PredicateFn = dyn Fn(&[u64]) -> bool + Send + Sync;

/// A rule a configuration must satisfy.
#[derive(Clone)]
pub enum Constraint {
    Expr { text: String, expr: Expr },
    Predicate { label: String, check: Arc<PredicateFn> },
}

impl Constraint {
    /// Whether `values` satisfies the rule. Evaluation errors reject.
    pub fn accepts(&self, values: &[u64]) -> bool {
        match self {
            Constraint::Expr { expr, .. } => expr.holds(values).unwrap_or(false),
            Constraint::Predicate { check, .. } => check(values),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Constraint::Expr { text, .. } => text,
            Constraint::Predicate { label, .. } => label,
        }
    }

    /// Parameter position after which the rule can be checked; `None` means
    /// it needs the full configuration.
    fn ready_at(&self) -> Option<usize> {
        match self {
            Constraint::Expr { expr, .. } => Some(expr.max_param_index().unwrap_or(0)),
            Constraint::Predicate { .. } => None,
        }
    }
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Expr { text, .. } => f.debug_tuple("Expr").field(text).finish(),
            Constraint::Predicate { label, .. } => f.debug_tuple("Predicate").field(label).finish(),
        }
    }
}

/// Ordered parameters plus constraints. The valid set is enumerated lazily
/// and cached; mutating the space resets the cache.
#[derive(Default)]
pub struct SearchSpace {
    params: Vec<Parameter>,
    constraints: Vec<Constraint>,
    valid: OnceBox<Vec<Configuration>>,
    count: OnceBox<u64>,
}

impl Clone for SearchSpace {
    fn clone(&self) -> Self {
        SearchSpace {
            params: self.params.clone(),
            constraints: self.constraints.clone(),
            valid: OnceBox::new(),
            count: OnceBox::new(),
        }
    }
}

impl fmt::Debug for SearchSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SearchSpace")
            .field("params", &self.params)
            .field("constraints", &self.constraints)
            .finish()
    }
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    fn invalidate(&mut self) {
        self.valid = OnceBox::new();
        self.count = OnceBox::new();
    }

    pub fn add_parameter(&mut self, name: &str, values: &[u64]) -> Result<&mut Self, SpaceError> {
        self.push_parameter(name, values, None)
    }

    /// Adds a parameter whose values carry display labels (e.g. `no`/`yes`).
    pub fn add_labeled_parameter(
        &mut self,
        name: &str,
        values: &[u64],
        labels: &[&str],
    ) -> Result<&mut Self, SpaceError> {
        if labels.len() != values.len() {
            return Err(SpaceError::LabelMismatch(name.into()));
        }
        self.push_parameter(name, values, Some(labels.iter().map(|l| l.to_string()).collect()))
    }

    fn push_parameter(
        &mut self,
        name: &str,
        values: &[u64],
        labels: Option<Vec<String>>,
    ) -> Result<&mut Self, SpaceError> {
        if !is_identifier(name) {
            return Err(SpaceError::InvalidName(name.into()));
        }
        if self.params.iter().any(|p| p.name == name) {
            return Err(SpaceError::DuplicateParameter(name.into()));
        }
        if values.is_empty() {
            return Err(SpaceError::EmptyValueList(name.into()));
        }
        for (i, v) in values.iter().enumerate() {
            if values[..i].contains(v) {
                return Err(SpaceError::DuplicateValue(name.into(), *v));
            }
        }
        self.params.push(Parameter {
            name: name.into(),
            values: values.to_vec(),
            labels,
        });
        self.invalidate();
        Ok(self)
    }

    /// Parses `text` against this space's parameters without adding it.
    pub fn parse_constraint(&self, text: &str) -> Result<Expr, SpaceError> {
        Ok(Expr::parse(text, &self.names())?)
    }

    pub fn add_constraint(&mut self, text: &str) -> Result<&mut Self, SpaceError> {
        let expr = self.parse_constraint(text)?;
        self.constraints.push(Constraint::Expr {
            text: text.into(),
            expr,
        });
        self.invalidate();
        Ok(self)
    }

    pub fn add_predicate(&mut self, label: &str, check: Arc<PredicateFn>) -> &mut Self {
        self.constraints.push(Constraint::Predicate {
            label: label.into(),
            check,
        });
        self.invalidate();
        self
    }

    pub fn extend_constraints(&mut self, constraints: impl IntoIterator<Item = Constraint>) {
        self.constraints.extend(constraints);
        self.invalidate();
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Value of parameter `name` in `config`.
    pub fn value(&self, config: &Configuration, name: &str) -> Option<u64> {
        self.position(name).map(|i| config.0[i])
    }

    /// Size of the unconstrained Cartesian product.
    pub fn raw_size(&self) -> u128 {
        if self.params.is_empty() {
            return 0;
        }
        self.params.iter().map(|p| p.values.len() as u128).product()
    }

    /// Builds a configuration from `(name, value)` pairs covering every
    /// parameter. Does not check constraints.
    pub fn configuration(&self, pairs: &[(&str, u64)]) -> Result<Configuration, SpaceError> {
        let mut values = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let v = pairs
                .iter()
                .find(|(n, _)| *n == p.name)
                .map(|(_, v)| *v)
                .ok_or_else(|| ExprError::UnknownParameter(p.name.clone()))?;
            if p.index_of(v).is_none() {
                return Err(SpaceError::InvalidConfiguration);
            }
            values.push(v);
        }
        if pairs.len() != self.params.len() {
            let extra = pairs.iter().find(|(n, _)| self.position(n).is_none());
            if let Some((n, _)) = extra {
                return Err(ExprError::UnknownParameter(n.to_string()).into());
            }
        }
        Ok(Configuration(values))
    }

    /// Whether every value is drawn from its parameter and all constraints hold.
    pub fn is_valid(&self, config: &Configuration) -> bool {
        config.0.len() == self.params.len()
            && self
                .params
                .iter()
                .zip(&config.0)
                .all(|(p, v)| p.values.contains(v))
            && self.constraints.iter().all(|c| c.accepts(&config.0))
    }

    /// `name=value` pairs sorted by name, joined with `;`.
    pub fn canonical(&self, config: &Configuration) -> String {
        let mut pairs: Vec<(&str, u64)> = self
            .params
            .iter()
            .zip(&config.0)
            .map(|(p, v)| (p.name.as_str(), *v))
            .collect();
        pairs.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (i, (name, value)) in pairs.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            out.push_str(name);
            out.push('=');
            out.push_str(&value.to_string());
        }
        out
    }

    /// `(name, value)` pairs in parameter order.
    pub fn named<'a>(&'a self, config: &Configuration) -> Vec<(&'a str, u64)> {
        self.params
            .iter()
            .zip(&config.0)
            .map(|(p, v)| (p.name.as_str(), *v))
            .collect()
    }

    /// Depth-first walk over the Cartesian product in lexicographic order,
    /// checking each constraint as soon as the parameters it reads are fixed.
    fn walk(&self, mut visit: impl FnMut(&[u64])) {
        let n = self.params.len();
        if n == 0 {
            return;
        }
        let mut staged: Vec<Vec<&Constraint>> = alloc::vec![Vec::new(); n];
        for c in &self.constraints {
            staged[c.ready_at().unwrap_or(n - 1).min(n - 1)].push(c);
        }
        let mut values = alloc::vec![0u64; n];
        let mut idx = alloc::vec![0usize; n];
        let mut depth = 0usize;
        loop {
            if idx[depth] == self.params[depth].values.len() {
                if depth == 0 {
                    return;
                }
                idx[depth] = 0;
                depth -= 1;
                idx[depth] += 1;
                continue;
            }
            values[depth] = self.params[depth].values[idx[depth]];
            // Unset trailing positions are never read by staged constraints.
            let ok = staged[depth].iter().all(|c| c.accepts(&values));
            if !ok {
                idx[depth] += 1;
            } else if depth + 1 == n {
                visit(&values);
                idx[depth] += 1;
            } else {
                depth += 1;
            }
        }
    }

    pub fn is_enumerable(&self) -> bool {
        self.raw_size() <= ENUMERATION_LIMIT
    }

    /// Every valid configuration in lexicographic order over parameter order
    /// and value-list order. Cached after the first call.
    pub fn enumerate_valid(&self) -> Result<&[Configuration], SpaceError> {
        if self.params.is_empty() {
            return Err(SpaceError::NoParameters);
        }
        let raw = self.raw_size();
        if raw > ENUMERATION_LIMIT {
            return Err(SpaceError::ExplicitEnumerationTooLarge(raw));
        }
        let list = self.valid.get_or_init(|| {
            let mut out = Vec::new();
            self.walk(|v| out.push(Configuration(v.to_vec())));
            Box::new(out)
        });
        Ok(list)
    }

    /// Number of valid configurations. Spaces above the enumeration limit
    /// are counted without materializing the list.
    pub fn valid_count(&self) -> Result<u64, SpaceError> {
        if self.params.is_empty() {
            return Err(SpaceError::NoParameters);
        }
        if self.is_enumerable() {
            return Ok(self.enumerate_valid()?.len() as u64);
        }
        Ok(*self.count.get_or_init(|| {
            let mut n = 0u64;
            self.walk(|_| n += 1);
            Box::new(n)
        }))
    }

    /// Uniformly random valid configuration.
    pub fn random_valid<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Configuration, SpaceError> {
        if self.is_enumerable() {
            let all = self.enumerate_valid()?;
            if all.is_empty() {
                return Err(SpaceError::EmptySpace);
            }
            return Ok(all[rng.gen_range(0..all.len())].clone());
        }
        for _ in 0..REJECTION_ATTEMPTS {
            let c = self.random_raw(rng);
            if self.is_valid(&c) {
                return Ok(c);
            }
        }
        Err(SpaceError::EmptySpace)
    }

    fn random_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        Configuration(
            self.params
                .iter()
                .map(|p| p.values[rng.gen_range(0..p.values.len())])
                .collect(),
        )
    }

    /// A valid configuration differing from `config` in exactly one parameter
    /// by one step in that parameter's value list, uniform over all such
    /// neighbours. Without neighbours, a uniform random other valid
    /// configuration (or `config` itself when it is the only one).
    pub fn random_neighbor<R: Rng + ?Sized>(
        &self,
        config: &Configuration,
        rng: &mut R,
    ) -> Result<Configuration, SpaceError> {
        if !self.is_valid(config) {
            return Err(SpaceError::InvalidConfiguration);
        }
        let neighbors = self.neighbors(config);
        if !neighbors.is_empty() {
            return Ok(neighbors[rng.gen_range(0..neighbors.len())].clone());
        }
        if self.is_enumerable() {
            let others: Vec<&Configuration> =
                self.enumerate_valid()?.iter().filter(|c| *c != config).collect();
            if others.is_empty() {
                return Ok(config.clone());
            }
            return Ok(others[rng.gen_range(0..others.len())].clone());
        }
        for _ in 0..REJECTION_ATTEMPTS {
            let c = self.random_valid(rng)?;
            if &c != config {
                return Ok(c);
            }
        }
        Ok(config.clone())
    }

    /// All valid single-parameter ±1 index moves from `config`.
    pub fn neighbors(&self, config: &Configuration) -> Vec<Configuration> {
        let mut out = Vec::new();
        for (d, p) in self.params.iter().enumerate() {
            let Some(i) = p.index_of(config.0[d]) else {
                continue;
            };
            let candidates = [i.checked_sub(1), Some(i + 1).filter(|&j| j < p.values.len())];
            for j in candidates.into_iter().flatten() {
                let mut c = config.clone();
                c.0[d] = p.values[j];
                if self.constraints.iter().all(|k| k.accepts(&c.0)) {
                    out.push(c);
                }
            }
        }
        out
    }

    /// `n` distinct valid configurations, uniform without replacement.
    pub fn sample_unique<R: Rng + ?Sized>(
        &self,
        n: u64,
        rng: &mut R,
    ) -> Result<Vec<Configuration>, SpaceError> {
        let available = self.valid_count()?;
        if n > available {
            return Err(SpaceError::BudgetExceedsSpace {
                requested: n,
                available,
            });
        }
        if self.is_enumerable() {
            let all = self.enumerate_valid()?;
            let picks = rand::seq::index::sample(rng, all.len(), n as usize);
            return Ok(picks.into_iter().map(|i| all[i].clone()).collect());
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(n as usize);
        while (out.len() as u64) < n {
            let c = self.random_valid(rng)?;
            if seen.insert(c.clone()) {
                out.push(c);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn copy_space() -> SearchSpace {
        let mut s = SearchSpace::new();
        s.add_parameter("WPT", &[1, 2, 4]).unwrap();
        s
    }

    #[test]
    fn add_parameter_sizes_and_errors() {
        let mut s = copy_space();
        assert_eq!(s.raw_size(), 3);
        assert_eq!(
            s.add_parameter("WPT", &[1]).unwrap_err(),
            SpaceError::DuplicateParameter("WPT".into())
        );
        assert_eq!(
            s.add_parameter("X", &[]).unwrap_err(),
            SpaceError::EmptyValueList("X".into())
        );
        assert_eq!(
            s.add_parameter("X", &[1, 1]).unwrap_err(),
            SpaceError::DuplicateValue("X".into(), 1)
        );
        assert_eq!(
            s.add_parameter("L$", &[1]).unwrap_err(),
            SpaceError::InvalidName("L$".into())
        );

        let mut t = SearchSpace::new();
        t.add_parameter("A", &[1, 2]).unwrap();
        t.add_parameter("B", &[0, 1]).unwrap();
        assert_eq!(t.raw_size(), 4);
    }

    #[test]
    fn copy_example_enumerates_three() {
        let s = copy_space();
        assert_eq!(s.enumerate_valid().unwrap().len(), 3);
    }

    #[test]
    fn workgroup_limit_enumeration() {
        let mut s = SearchSpace::new();
        s.add_parameter("Xwg", &[8, 16, 32, 64]).unwrap();
        s.add_parameter("Ywg", &[8, 16, 32, 64]).unwrap();
        s.add_constraint("Xwg*Ywg<=512").unwrap();
        // brute force over the 16 pairs
        let mut expected = 0;
        for x in [8u64, 16, 32, 64] {
            for y in [8u64, 16, 32, 64] {
                if x * y <= 512 {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 10);
        assert_eq!(s.enumerate_valid().unwrap().len(), expected);
    }

    #[test]
    fn unsatisfiable_is_empty() {
        let mut s = copy_space();
        s.add_constraint("1 == 0").unwrap();
        assert!(s.enumerate_valid().unwrap().is_empty());
        assert_eq!(s.random_valid(&mut seeded(1)), Err(SpaceError::EmptySpace));
    }

    #[test]
    fn cache_invalidated_by_mutation() {
        let mut s = copy_space();
        assert_eq!(s.enumerate_valid().unwrap().len(), 3);
        s.add_constraint("WPT > 1").unwrap();
        assert_eq!(s.enumerate_valid().unwrap().len(), 2);
        s.add_parameter("B", &[0, 1]).unwrap();
        assert_eq!(s.enumerate_valid().unwrap().len(), 4);
    }

    #[test]
    fn enumeration_order_is_lexicographic() {
        let mut s = SearchSpace::new();
        s.add_parameter("A", &[3, 1]).unwrap();
        s.add_parameter("B", &[0, 5]).unwrap();
        let got: Vec<_> = s.enumerate_valid().unwrap().iter().map(|c| c.0.clone()).collect();
        assert_eq!(got, [[3, 0], [3, 5], [1, 0], [1, 5]]);
    }

    #[test]
    fn neighbor_of_middle_value_is_either_side() {
        let s = copy_space();
        let mut rng = seeded(3);
        let mut ones = 0;
        let trials = 10_000;
        for _ in 0..trials {
            let n = s
                .random_neighbor(&Configuration(alloc::vec![2]), &mut rng)
                .unwrap();
            match n.0[0] {
                1 => ones += 1,
                4 => {}
                other => panic!("unexpected neighbour {other}"),
            }
        }
        let p = ones as f64 / trials as f64;
        assert!((p - 0.5).abs() < 0.02, "{p}");
    }

    #[test]
    fn single_valid_configuration_is_its_own_neighbor() {
        let mut s = copy_space();
        s.add_constraint("WPT == 2").unwrap();
        let c = Configuration(alloc::vec![2]);
        assert_eq!(s.random_neighbor(&c, &mut seeded(0)).unwrap(), c);
    }

    #[test]
    fn neighbor_of_invalid_config_is_an_error() {
        let mut s = copy_space();
        s.add_constraint("WPT != 4").unwrap();
        assert_eq!(
            s.random_neighbor(&Configuration(alloc::vec![4]), &mut seeded(0)),
            Err(SpaceError::InvalidConfiguration)
        );
    }

    #[test]
    fn isolated_config_jumps_elsewhere() {
        // 1 and 4 are valid, 2 is not: no ±1 neighbour from either.
        let mut s = copy_space();
        s.add_constraint("WPT != 2").unwrap();
        let n = s
            .random_neighbor(&Configuration(alloc::vec![1]), &mut seeded(9))
            .unwrap();
        assert_eq!(n.0, [4]);
    }

    #[test]
    fn sample_unique_bounds() {
        let mut s = SearchSpace::new();
        s.add_parameter("A", &[1, 2, 3, 4]).unwrap();
        s.add_parameter("B", &[1, 2, 3]).unwrap();
        let mut rng = seeded(5);
        let mut all = s.sample_unique(12, &mut rng).unwrap();
        all.sort();
        assert_eq!(all, s.enumerate_valid().unwrap());
        assert_eq!(
            s.sample_unique(13, &mut rng),
            Err(SpaceError::BudgetExceedsSpace {
                requested: 13,
                available: 12
            })
        );
    }

    #[test]
    fn sample_unique_is_seed_deterministic() {
        let mut s = SearchSpace::new();
        s.add_parameter("A", &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        s.add_parameter("B", &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let a = s.sample_unique(20, &mut seeded(42)).unwrap();
        let b = s.sample_unique(20, &mut seeded(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_encoding_sorts_names() {
        let mut s = SearchSpace::new();
        s.add_parameter("b", &[1, 2]).unwrap();
        s.add_parameter("a", &[3]).unwrap();
        assert_eq!(s.canonical(&Configuration(alloc::vec![2, 3])), "a=3;b=2");
    }

    #[test]
    fn huge_space_refuses_enumeration_but_counts() {
        let mut s = SearchSpace::new();
        for name in ["A", "B", "C", "D", "E", "F", "G", "H"] {
            s.add_parameter(name, &[0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
        }
        // 8^8 = 16.7M raw; pin all but two dimensions.
        s.add_constraint("A == 0 && B == 0 && C == 0 && D == 0 && E == 0 && F == 0")
            .unwrap();
        assert!(matches!(
            s.enumerate_valid(),
            Err(SpaceError::ExplicitEnumerationTooLarge(16_777_216))
        ));
        assert_eq!(s.valid_count().unwrap(), 64);
    }

    #[test]
    fn configuration_from_pairs() {
        let mut s = SearchSpace::new();
        s.add_parameter("A", &[1, 2]).unwrap();
        s.add_parameter("B", &[3, 4]).unwrap();
        assert_eq!(s.configuration(&[("B", 4), ("A", 1)]).unwrap().0, [1, 4]);
        assert!(s.configuration(&[("A", 1)]).is_err());
        assert_eq!(
            s.configuration(&[("A", 7), ("B", 4)]),
            Err(SpaceError::InvalidConfiguration)
        );
    }
}
