//! Geographic substrate, districting plans and ensembles.
//!
//! A [`PrecinctMap`] is immutable once built; plans and ensembles refer to
//! precincts by their index in map order.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};

pub const POPULATION: &str = "population";
pub const AREA: &str = "area";
pub const EXTERIOR_BOUNDARY: &str = "exterior_boundary_length";
pub const VOTES_DEM: &str = "votes_dem";
pub const VOTES_REP: &str = "votes_rep";

/// Columns every attributes table must carry.
pub const REQUIRED_COLUMNS: [&str; 3] = [POPULATION, AREA, EXTERIOR_BOUNDARY];

/// District label type. Labels run from 1 to `d` inclusive.
pub type Label = u16;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub shared_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecinctMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    columns: Vec<Column>,
    edges: Vec<Edge>,
    /// `(neighbor, edge index)` per precinct, neighbors ascending.
    neighbors: Vec<Vec<(usize, usize)>>,
    regions: Option<Vec<i64>>,
}

impl PrecinctMap {
    /// Builds a map and checks every structural invariant: unique ids,
    /// well-formed edges, connectivity, nonnegative columns and positive areas.
    pub fn new(
        ids: Vec<String>,
        columns: Vec<Column>,
        edges: Vec<Edge>,
        regions: Option<Vec<i64>>,
    ) -> Result<Self> {
        let count = ids.len();
        if count == 0 {
            return Err(Error::invalid("map has no precincts"));
        }
        let mut index = HashMap::with_capacity(count);
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate precinct id \"{id}\"")));
            }
        }

        let mut seen_names = HashSet::new();
        for column in &columns {
            if !seen_names.insert(column.name.as_str()) {
                return Err(Error::invalid(format!("duplicate column \"{}\"", column.name)));
            }
            if column.values.len() != count {
                return Err(Error::invalid(format!(
                    "column \"{}\" has {} values for {} precincts",
                    column.name,
                    column.values.len(),
                    count
                )));
            }
            for (i, &x) in column.values.iter().enumerate() {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::invalid(format!(
                        "column \"{}\" has negative or non-finite value {x} at precinct \"{}\"",
                        column.name, ids[i]
                    )));
                }
            }
        }
        for name in REQUIRED_COLUMNS {
            if !seen_names.contains(name) {
                return Err(Error::invalid(format!("missing required column \"{name}\"")));
            }
        }
        if let Some(regions) = &regions {
            if regions.len() != count {
                return Err(Error::invalid("region labels do not cover every precinct"));
            }
        }

        let mut neighbors = vec![Vec::new(); count];
        let mut pairs = HashSet::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            if e.a >= count || e.b >= count {
                return Err(Error::invalid(format!("edge {k} references a precinct index out of range")));
            }
            if e.a == e.b {
                return Err(Error::invalid(format!("self-loop on precinct \"{}\"", ids[e.a])));
            }
            if !e.shared_length.is_finite() || e.shared_length < 0.0 {
                return Err(Error::invalid(format!(
                    "edge {}-{} has negative shared boundary length {}",
                    ids[e.a], ids[e.b], e.shared_length
                )));
            }
            if !pairs.insert((e.a.min(e.b), e.a.max(e.b))) {
                return Err(Error::invalid(format!("duplicate edge {}-{}", ids[e.a], ids[e.b])));
            }
            neighbors[e.a].push((e.b, k));
            neighbors[e.b].push((e.a, k));
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        let map = PrecinctMap {
            ids,
            index,
            columns,
            edges,
            neighbors,
            regions,
        };
        let area = map.column(AREA).expect("checked above");
        if let Some(i) = area.iter().position(|&a| a <= 0.0) {
            return Err(Error::invalid(format!("precinct \"{}\" has non-positive area", map.ids[i])));
        }
        let components = map.components();
        if components.len() > 1 {
            return Err(Error::Disconnected {
                components: components
                    .into_iter()
                    .map(|c| c.into_iter().map(|v| map.ids[v].clone()).collect())
                    .collect(),
            });
        }
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).map(|i| self.columns[i].values.as_slice())
    }

    pub(crate) fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub(crate) fn column_at(&self, index: usize) -> &[f64] {
        &self.columns[index].values
    }

    pub fn population(&self) -> &[f64] {
        self.column(POPULATION).expect("required column")
    }

    pub fn total_population(&self) -> f64 {
        self.population().iter().sum()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[v].iter().map(|&(u, _)| u)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn regions(&self) -> Option<&[i64]> {
        self.regions.as_deref()
    }

    /// Connected components of the precinct graph restricted to `keep`.
    fn components_where(&self, keep: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.len() {
            if seen[start] || !keep(start) {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut component = Vec::new();
            while let Some(v) = queue.pop_front() {
                component.push(v);
                for u in self.neighbors(v) {
                    if !seen[u] && keep(u) {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
            component.sort_unstable();
            out.push(component);
        }
        out
    }

    fn components(&self) -> Vec<Vec<usize>> {
        self.components_where(|_| true)
    }

    /// True when the given precinct set induces a connected subgraph.
    /// The empty set is reported as disconnected.
    pub fn is_connected_subset(&self, members: &[bool]) -> bool {
        let Some(start) = members.iter().position(|&m| m) else {
            return false;
        };
        let mut seen = vec![false; self.len()];
        seen[start] = true;
        let mut stack = vec![start];
        let mut reached = 1;
        while let Some(v) = stack.pop() {
            for u in self.neighbors(v) {
                if members[u] && !seen[u] {
                    seen[u] = true;
                    reached += 1;
                    stack.push(u);
                }
            }
        }
        reached == members.iter().filter(|&&m| m).count()
    }
}

/// One assignment of precincts to district labels `1..=districts`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Plan {
    labels: Vec<Label>,
    districts: Label,
}

impl Plan {
    /// Checks that labels lie in `1..=districts` and that every label is used.
    pub fn new(labels: Vec<Label>, districts: Label) -> Result<Self> {
        check_labels(&labels, districts).map_err(Error::Invalid)?;
        Ok(Plan { labels, districts })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn districts(&self) -> usize {
        self.districts as usize
    }

    pub fn view(&self) -> PlanRef<'_> {
        PlanRef {
            labels: &self.labels,
            districts: self.districts,
        }
    }

    /// Relabels districts so that labels appear in order of first occurrence
    /// along map index order. Two plans describe the same partition iff their
    /// canonical forms are equal.
    pub fn canonical(&self) -> Plan {
        Plan {
            labels: canonical_labels(&self.labels, self.districts as usize),
            districts: self.districts,
        }
    }
}

pub(crate) fn canonical_labels(labels: &[Label], districts: usize) -> Vec<Label> {
    let mut remap = vec![0 as Label; districts + 1];
    let mut next = 1;
    labels
        .iter()
        .map(|&l| {
            let slot = &mut remap[l as usize];
            if *slot == 0 {
                *slot = next;
                next += 1;
            }
            *slot
        })
        .collect()
}

fn check_labels(labels: &[Label], districts: Label) -> std::result::Result<(), String> {
    if districts == 0 {
        return Err("plan must have at least one district".into());
    }
    let mut used = vec![false; districts as usize + 1];
    for &l in labels {
        if l == 0 || l > districts {
            return Err(format!("label {l} outside 1..={districts}"));
        }
        used[l as usize] = true;
    }
    if let Some(j) = (1..=districts as usize).find(|&j| !used[j]) {
        return Err(format!("district {j} empty"));
    }
    Ok(())
}

/// Borrowed view of a plan; ensembles hand these out without copying.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanRef<'a> {
    labels: &'a [Label],
    districts: Label,
}

impl<'a> PlanRef<'a> {
    pub fn labels(&self) -> &'a [Label] {
        self.labels
    }

    pub fn districts(&self) -> usize {
        self.districts as usize
    }

    /// Zero-based district index of precinct `v`.
    #[inline]
    pub fn district_of(&self, v: usize) -> usize {
        self.labels[v] as usize - 1
    }

    pub fn to_plan(&self) -> Plan {
        Plan {
            labels: self.labels.to_vec(),
            districts: self.districts,
        }
    }
}

impl<'a> From<&'a Plan> for PlanRef<'a> {
    fn from(plan: &'a Plan) -> Self {
        plan.view()
    }
}

/// `n` plans over one map, stored plan-major: plan `i` occupies
/// `labels[i * |V| .. (i + 1) * |V|]`.
#[derive(Debug, Clone)]
pub struct Ensemble {
    map: Arc<PrecinctMap>,
    districts: Label,
    plans: usize,
    labels: Vec<Label>,
}

impl Ensemble {
    pub fn new(map: Arc<PrecinctMap>, districts: usize, labels: Vec<Label>) -> Result<Self> {
        let v = map.len();
        if districts == 0 || districts > Label::MAX as usize {
            return Err(Error::invalid(format!("unsupported district count {districts}")));
        }
        if labels.is_empty() || labels.len() % v != 0 {
            return Err(Error::invalid(format!(
                "assignment storage of length {} is not a positive multiple of {v} precincts",
                labels.len()
            )));
        }
        let plans = labels.len() / v;
        for (i, chunk) in labels.chunks_exact(v).enumerate() {
            check_labels(chunk, districts as Label)
                .map_err(|e| Error::invalid(format!("plan {}: {e}", i + 1)))?;
        }
        Ok(Ensemble {
            map,
            districts: districts as Label,
            plans,
            labels,
        })
    }

    pub fn from_plans(map: Arc<PrecinctMap>, plans: &[Plan]) -> Result<Self> {
        let first = plans
            .first()
            .ok_or_else(|| Error::invalid("an ensemble needs at least one plan"))?;
        let d = first.districts();
        let mut labels = Vec::with_capacity(plans.len() * map.len());
        for (i, p) in plans.iter().enumerate() {
            if p.districts() != d {
                return Err(Error::invalid(format!(
                    "plan {}: has {} districts, expected {d}",
                    i + 1,
                    p.districts()
                )));
            }
            if p.labels.len() != map.len() {
                return Err(Error::invalid(format!(
                    "plan {}: covers {} precincts, map has {}",
                    i + 1,
                    p.labels.len(),
                    map.len()
                )));
            }
            labels.extend_from_slice(&p.labels);
        }
        Ensemble::new(map, d, labels)
    }

    pub fn map(&self) -> &PrecinctMap {
        &self.map
    }

    pub fn shared_map(&self) -> &Arc<PrecinctMap> {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.plans
    }

    pub fn is_empty(&self) -> bool {
        self.plans == 0
    }

    pub fn districts(&self) -> usize {
        self.districts as usize
    }

    pub fn plan(&self, i: usize) -> PlanRef<'_> {
        let v = self.map.len();
        PlanRef {
            labels: &self.labels[i * v..(i + 1) * v],
            districts: self.districts,
        }
    }

    pub fn plans(&self) -> impl ExactSizeIterator<Item = PlanRef<'_>> + '_ {
        (0..self.plans).map(move |i| self.plan(i))
    }

    pub fn raw_labels(&self) -> &[Label] {
        &self.labels
    }

    /// The ensemble with plan `i` removed.
    pub fn without(&self, i: usize) -> Result<Ensemble> {
        if self.plans < 2 {
            return Err(Error::invalid("cannot remove the only plan of an ensemble"));
        }
        let v = self.map.len();
        let mut labels = Vec::with_capacity(self.labels.len() - v);
        labels.extend_from_slice(&self.labels[..i * v]);
        labels.extend_from_slice(&self.labels[(i + 1) * v..]);
        Ok(Ensemble {
            map: Arc::clone(&self.map),
            districts: self.districts,
            plans: self.plans - 1,
            labels,
        })
    }
}

/// One real value or missing marker per precinct.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecinctField {
    values: Vec<Option<f64>>,
}

impl PrecinctField {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        PrecinctField { values }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        PrecinctField {
            values: values.into_iter().map(Some).collect(),
        }
    }

    pub fn constant(len: usize, value: f64) -> Self {
        PrecinctField {
            values: vec![Some(value); len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, v: usize) -> Option<f64> {
        self.values[v]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|x| x.is_none()).count()
    }

    /// Values with missing entries replaced by NaN.
    pub fn to_dense(&self) -> Vec<f64> {
        self.values.iter().map(|x| x.unwrap_or(f64::NAN)).collect()
    }

    /// Pointwise `self - other`; missing if either side is missing.
    pub fn minus(&self, other: &PrecinctField) -> PrecinctField {
        assert_eq!(self.len(), other.len(), "fields over different maps");
        PrecinctField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| Some((*a)? - (*b)?))
                .collect(),
        }
    }

    /// Largest absolute value among present entries, 0 when none.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

/// Per-district balance and contiguity diagnostics for one plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub sizes: Vec<usize>,
    pub populations: Vec<f64>,
    /// `pop_j / (total / d) - 1` per district.
    pub deviations: Vec<f64>,
    pub contiguous: Vec<bool>,
    pub pop_tol: f64,
}

impl PlanReport {
    pub fn max_abs_deviation(&self) -> f64 {
        self.deviations.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// Checked as `|d·pop_j − total| ≤ tol·total`, which is exact for
    /// integer populations where the ratio form is not.
    pub fn balanced(&self) -> bool {
        let total: f64 = self.populations.iter().sum();
        let d = self.populations.len() as f64;
        self.populations
            .iter()
            .all(|p| (d * p - total).abs() <= self.pop_tol * total)
    }

    pub fn all_contiguous(&self) -> bool {
        self.contiguous.iter().all(|&c| c)
    }

    pub fn is_valid(&self) -> bool {
        self.balanced() && self.all_contiguous()
    }
}

/// Population balance and contiguity of every district. Failures are
/// reported, not raised.
pub fn validate_plan(map: &PrecinctMap, plan: PlanRef<'_>, pop_tol: f64) -> PlanReport {
    assert_eq!(plan.labels().len(), map.len(), "plan over a different map");
    let d = plan.districts();
    let pop = map.population();
    let mut sizes = vec![0; d];
    let mut populations = vec![0.0; d];
    for (v, &p) in pop.iter().enumerate() {
        let j = plan.district_of(v);
        sizes[j] += 1;
        populations[j] += p;
    }
    let ideal = map.total_population() / d as f64;
    let deviations = populations.iter().map(|p| p / ideal - 1.0).collect();
    let contiguous = (0..d)
        .map(|j| {
            let members: Vec<bool> = (0..map.len()).map(|v| plan.district_of(v) == j).collect();
            map.is_connected_subset(&members)
        })
        .collect();
    PlanReport {
        sizes,
        populations,
        deviations,
        contiguous,
        pop_tol,
    }
}
