//! Synthetic maps, plan samplers, exhaustive enumeration and planted
//! gerrymanders.
//!
//! Every generator is deterministic in its seed. Random streams come from
//! ChaCha8 (`rand_chacha`), and all bounded draws are made on `u32` ranges,
//! so outputs are identical across platforms and thread counts.
//!
//! The plan sampler draws a uniform random spanning tree of the unassigned
//! region (Wilson's algorithm), collects the tree edges whose removal splits
//! off a population-balanced district, and cuts one of them uniformly at
//! random. Its output distribution is "uniform over accepted tree cuts"; it
//! is not meant to match any particular target distribution over plans.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    validate_plan, Column, Edge, Ensemble, Label, Plan, PrecinctMap, AREA, EXTERIOR_BOUNDARY, POPULATION,
    VOTES_DEM, VOTES_REP,
};

pub const GRID_ROW: &str = "grid_row";
pub const GRID_COL: &str = "grid_col";

/// Largest map [`enumerate_plans`] accepts.
pub const ENUMERATION_CAP: usize = 16;

/// Tree draws allowed per sampled plan.
pub const DRAWS_PER_PLAN: usize = 1000;

/// Consecutive failed draws at one split before a plan is restarted.
const DRAWS_PER_SPLIT: usize = 50;

const TURNOUT: f64 = 0.6;
const VAP_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PopulationModel {
    Uniform { per_precinct: u32 },
    /// Rises linearly from the west column to the east column.
    LinearGradient { west: u32, east: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PartisanModel {
    Uniform { share: f64 },
    LinearGradient { west: f64, east: f64 },
    /// `base + intensity · exp(-(dist / radius)²)` around a center given in
    /// (row, col) cell coordinates.
    Hotspot { row: f64, col: f64, radius: f64, intensity: f64, base: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub population: PopulationModel,
    pub partisan: PartisanModel,
    /// Half-width of the uniform jitter added to each precinct's share.
    pub noise: f64,
    pub seed: u64,
}

impl GridSpec {
    pub fn uniform(rows: usize, cols: usize) -> Self {
        GridSpec {
            rows,
            cols,
            population: PopulationModel::Uniform { per_precinct: 100 },
            partisan: PartisanModel::Uniform { share: 0.5 },
            noise: 0.0,
            seed: 0,
        }
    }

    pub fn with_partisan(mut self, partisan: PartisanModel) -> Self {
        self.partisan = partisan;
        self
    }

    pub fn with_noise(mut self, noise: f64, seed: u64) -> Self {
        self.noise = noise;
        self.seed = seed;
        self
    }

    fn population_at(&self, col: usize) -> f64 {
        match self.population {
            PopulationModel::Uniform { per_precinct } => per_precinct as f64,
            PopulationModel::LinearGradient { west, east } => {
                let t = if self.cols > 1 { col as f64 / (self.cols - 1) as f64 } else { 0.0 };
                (west as f64 + t * (east as f64 - west as f64)).round()
            }
        }
    }

    fn share_at(&self, row: usize, col: usize) -> f64 {
        match self.partisan {
            PartisanModel::Uniform { share } => share,
            PartisanModel::LinearGradient { west, east } => {
                let t = if self.cols > 1 { col as f64 / (self.cols - 1) as f64 } else { 0.0 };
                west + t * (east - west)
            }
            PartisanModel::Hotspot { row: r0, col: c0, radius, intensity, base } => {
                let dist2 = (row as f64 - r0).powi(2) + (col as f64 - c0).powi(2);
                base + intensity * (-dist2 / (radius * radius)).exp()
            }
        }
    }
}

/// Rook-adjacency grid of unit squares. Precinct `r * cols + c` has id
/// `r{r}c{c}`; regions are the four quadrant blocks.
pub fn generate_grid_map(spec: &GridSpec) -> Result<PrecinctMap> {
    let (rows, cols) = (spec.rows, spec.cols);
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid needs at least one row and one column"));
    }
    if let PopulationModel::LinearGradient { west, east } = spec.population {
        if west == 0 || east == 0 {
            return Err(Error::invalid("grid populations must be positive"));
        }
    }
    let n = rows * cols;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ids = Vec::with_capacity(n);
    let mut edges = Vec::with_capacity(2 * n);
    let mut degree = vec![0usize; n];
    let mut population = Vec::with_capacity(n);
    let mut dem = Vec::with_capacity(n);
    let mut rep = Vec::with_capacity(n);
    let mut vap = Vec::with_capacity(n);
    let mut vap_white = Vec::with_capacity(n);
    let mut grid_row = Vec::with_capacity(n);
    let mut grid_col = Vec::with_capacity(n);
    let mut regions = Vec::with_capacity(n);
    let (half_r, half_c) = (rows.div_ceil(2), cols.div_ceil(2));
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            ids.push(format!("r{r}c{c}"));
            if c + 1 < cols {
                edges.push(Edge { a: v, b: v + 1, shared_length: 1.0 });
                degree[v] += 1;
                degree[v + 1] += 1;
            }
            if r + 1 < rows {
                edges.push(Edge { a: v, b: v + cols, shared_length: 1.0 });
                degree[v] += 1;
                degree[v + cols] += 1;
            }
            let pop = spec.population_at(c);
            let jitter = if spec.noise > 0.0 { spec.noise * (2.0 * rng.gen::<f64>() - 1.0) } else { 0.0 };
            let share = (spec.share_at(r, c) + jitter).clamp(0.01, 0.99);
            let votes = pop * TURNOUT;
            population.push(pop);
            dem.push(votes * share);
            rep.push(votes * (1.0 - share));
            let adults = pop * VAP_FRACTION;
            vap.push(adults);
            vap_white.push(adults * (0.95 - 0.6 * share).clamp(0.0, 1.0));
            grid_row.push(r as f64);
            grid_col.push(c as f64);
            regions.push(((r / half_r) * 2 + c / half_c + 1) as i64);
        }
    }
    let column = |name: &str, values: Vec<f64>| Column { name: name.to_string(), values };
    let columns = vec![
        column(POPULATION, population),
        column(AREA, vec![1.0; n]),
        column(EXTERIOR_BOUNDARY, degree.iter().map(|&k| 4.0 - k as f64).collect()),
        column(VOTES_DEM, dem),
        column(VOTES_REP, rep),
        column("vap", vap),
        column("vap_white", vap_white),
        column(GRID_ROW, grid_row),
        column(GRID_COL, grid_col),
    ];
    PrecinctMap::new(ids, columns, edges, Some(regions))
}

/// Integer population balance: a district of population `p` is accepted when
/// `|d·p − total| ≤ slack`, with `slack = ⌊tol · total⌋`.
#[derive(Debug, Clone, Copy)]
struct Balance {
    total: u64,
    districts: u64,
    slack: u64,
}

impl Balance {
    fn new(pops: &[u64], districts: usize, pop_tol: f64) -> Self {
        let total: u64 = pops.iter().sum();
        Balance {
            total,
            districts: districts as u64,
            slack: (pop_tol.max(0.0) * total as f64).floor() as u64,
        }
    }

    fn district_ok(&self, p: u64) -> bool {
        (self.districts * p).abs_diff(self.total) <= self.slack
    }

    /// A region of population `q` that must still hold `k` districts.
    fn remainder_ok(&self, q: u64, k: u64) -> bool {
        (self.districts * q).abs_diff(k * self.total) <= k * self.slack
    }
}

fn integer_populations(map: &PrecinctMap) -> Vec<u64> {
    map.population().iter().map(|&p| p.round() as u64).collect()
}

/// Scratch buffers for one sampling worker.
struct TreeSampler<'a> {
    map: &'a PrecinctMap,
    pops: &'a [u64],
    balance: Balance,
    in_region: Vec<bool>,
    in_tree: Vec<bool>,
    next: Vec<usize>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    subtree: Vec<u64>,
    candidates: Vec<(usize, bool)>,
}

impl<'a> TreeSampler<'a> {
    fn new(map: &'a PrecinctMap, pops: &'a [u64], balance: Balance) -> Self {
        let n = map.len();
        TreeSampler {
            map,
            pops,
            balance,
            in_region: vec![false; n],
            in_tree: vec![false; n],
            next: vec![usize::MAX; n],
            children: vec![Vec::new(); n],
            order: Vec::with_capacity(n),
            subtree: vec![0; n],
            candidates: Vec::new(),
        }
    }

    /// Wilson's algorithm on the subgraph induced by `members`. Leaves
    /// `order` holding a BFS order of the tree from its root.
    fn spanning_tree(&mut self, members: &[usize], rng: &mut ChaCha8Rng) {
        for &v in members {
            self.in_tree[v] = false;
            self.next[v] = usize::MAX;
            self.children[v].clear();
        }
        let root = members[rng.gen_range(0..members.len() as u32) as usize];
        self.in_tree[root] = true;
        for &start in members {
            let mut u = start;
            while !self.in_tree[u] {
                let inside = self.map.neighbors(u).filter(|&w| self.in_region[w]).count();
                let pick = rng.gen_range(0..inside as u32) as usize;
                let w = self
                    .map
                    .neighbors(u)
                    .filter(|&w| self.in_region[w])
                    .nth(pick)
                    .expect("pick below count");
                self.next[u] = w;
                u = w;
            }
            let mut u = start;
            while !self.in_tree[u] {
                self.in_tree[u] = true;
                let parent = self.next[u];
                self.children[parent].push(u);
                u = parent;
            }
        }
        self.order.clear();
        self.order.push(root);
        let mut head = 0;
        while head < self.order.len() {
            let u = self.order[head];
            head += 1;
            for k in 0..self.children[u].len() {
                let c = self.children[u][k];
                self.order.push(c);
            }
        }
        for &u in self.order.iter().rev() {
            let mut s = self.pops[u];
            for &c in &self.children[u] {
                s += self.subtree[c];
            }
            self.subtree[u] = s;
        }
    }

    fn collect_subtree(&self, top: usize, out: &mut Vec<usize>) {
        out.clear();
        out.push(top);
        let mut head = 0;
        while head < out.len() {
            let u = out[head];
            head += 1;
            out.extend_from_slice(&self.children[u]);
        }
    }

    /// Draws one plan; `Err(draws)` when the budget runs out.
    fn sample(&mut self, districts: usize, rng: &mut ChaCha8Rng, budget: usize) -> std::result::Result<Vec<Label>, usize> {
        let n = self.map.len();
        let mut labels = vec![0 as Label; n];
        if districts == 1 {
            labels.fill(1);
            return Ok(labels);
        }
        let mut draws = 0;
        let mut region: Vec<usize> = Vec::with_capacity(n);
        let mut district = Vec::with_capacity(n);
        'restart: loop {
            region.clear();
            region.extend(0..n);
            self.in_region.fill(true);
            for label in 1..districts {
                let k = (districts - label + 1) as u64;
                let mut cut = None;
                for _ in 0..DRAWS_PER_SPLIT {
                    if draws == budget {
                        return Err(draws);
                    }
                    draws += 1;
                    self.spanning_tree(&region, rng);
                    let region_pop = self.subtree[self.order[0]];
                    self.candidates.clear();
                    for &u in &self.order[1..] {
                        let s = self.subtree[u];
                        let c = region_pop - s;
                        if k == 2 {
                            if self.balance.district_ok(s) && self.balance.district_ok(c) {
                                self.candidates.push((u, true));
                            }
                        } else {
                            if self.balance.district_ok(s) && self.balance.remainder_ok(c, k - 1) {
                                self.candidates.push((u, true));
                            }
                            if self.balance.district_ok(c) && self.balance.remainder_ok(s, k - 1) {
                                self.candidates.push((u, false));
                            }
                        }
                    }
                    if !self.candidates.is_empty() {
                        let pick = rng.gen_range(0..self.candidates.len() as u32) as usize;
                        cut = Some(self.candidates[pick]);
                        break;
                    }
                }
                let Some((top, take_subtree)) = cut else {
                    continue 'restart;
                };
                self.collect_subtree(top, &mut district);
                if !take_subtree {
                    let mut inside = vec![false; n];
                    for &u in &district {
                        inside[u] = true;
                    }
                    district = region.iter().copied().filter(|&u| !inside[u]).collect();
                }
                for &u in &district {
                    labels[u] = label as Label;
                    self.in_region[u] = false;
                }
                region.retain(|&u| self.in_region[u]);
            }
            for &u in &region {
                labels[u] = districts as Label;
            }
            return Ok(labels);
        }
    }
}

/// `n` contiguous plans with every district within `pop_tol` of `total / d`.
/// Plan `i` uses the ChaCha8 stream `i` of `seed`, so output does not depend
/// on the number of worker threads.
pub fn sample_plans(map: Arc<PrecinctMap>, districts: usize, n: usize, pop_tol: f64, seed: u64) -> Result<Ensemble> {
    if districts == 0 || districts > map.len() {
        return Err(Error::invalid(format!(
            "cannot draw {districts} districts on a map of {} precincts",
            map.len()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("an ensemble needs at least one plan"));
    }
    if map.len() <= 12 && enumerate_plans(&map, districts, pop_tol)?.is_empty() {
        return Err(Error::invalid(format!(
            "no contiguous plan with {districts} districts meets population tolerance {pop_tol}"
        )));
    }
    let pops = integer_populations(&map);
    let balance = Balance::new(&pops, districts, pop_tol);
    let v = map.len();
    let mut labels = vec![0 as Label; n * v];
    labels
        .par_chunks_mut(v)
        .enumerate()
        .try_for_each_init(
            || TreeSampler::new(&map, &pops, balance),
            |sampler, (i, out)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let plan = sampler
                    .sample(districts, &mut rng, DRAWS_PER_PLAN)
                    .map_err(|attempts| Error::SamplerExhausted { plan: i, attempts })?;
                out.copy_from_slice(&plan);
                Ok(())
            },
        )?;
    Ensemble::new(map, districts, labels)
}

/// Every contiguous plan with `d` districts within `pop_tol`, each listed
/// once in canonical labeling (precinct 0 in district 1, then labels in
/// order of first appearance).
pub fn enumerate_plans(map: &PrecinctMap, districts: usize, pop_tol: f64) -> Result<Vec<Plan>> {
    if map.len() > ENUMERATION_CAP {
        return Err(Error::TooLarge {
            cap: ENUMERATION_CAP,
            precincts: map.len(),
        });
    }
    if districts == 0 || districts > map.len() {
        return Ok(Vec::new());
    }
    let pops = integer_populations(map);
    let balance = Balance::new(&pops, districts, pop_tol);
    let mut search = Enumeration {
        map,
        pops: &pops,
        balance,
        districts,
        labels: vec![0; map.len()],
        district_pop: vec![0; districts + 1],
        out: Vec::new(),
    };
    search.extend(0, 0);
    Ok(search.out)
}

struct Enumeration<'a> {
    map: &'a PrecinctMap,
    pops: &'a [u64],
    balance: Balance,
    districts: usize,
    labels: Vec<Label>,
    district_pop: Vec<u64>,
    out: Vec<Plan>,
}

impl Enumeration<'_> {
    fn extend(&mut self, v: usize, used: usize) {
        let n = self.map.len();
        if v == n {
            if used == self.districts && self.complete() {
                self.out.push(Plan::new(self.labels.clone(), self.districts as Label).expect("complete labeling"));
            }
            return;
        }
        let upper = self.balance.total + self.balance.slack;
        for label in 1..=(used + 1).min(self.districts) {
            let used_after = used.max(label);
            if used_after + (n - v - 1) < self.districts {
                continue;
            }
            let p = self.district_pop[label] + self.pops[v];
            if self.balance.districts * p > upper {
                continue;
            }
            self.labels[v] = label as Label;
            self.district_pop[label] = p;
            self.extend(v + 1, used_after);
            self.district_pop[label] -= self.pops[v];
        }
        self.labels[v] = 0;
    }

    fn complete(&self) -> bool {
        (1..=self.districts).all(|j| {
            if !self.balance.district_ok(self.district_pop[j]) {
                return false;
            }
            let members: Vec<bool> = self.labels.iter().map(|&l| l as usize == j).collect();
            self.map.is_connected_subset(&members)
        })
    }
}

/// A perturbed plan with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPlan {
    pub plan: Plan,
    /// Precincts whose district, as a set of precincts, differs from the
    /// base plan; their projected values may change, all others cannot.
    pub perturbed: Vec<bool>,
    pub pack_label: Option<Label>,
    pub crack_label: Option<Label>,
}

fn plurality(labels: &[Label], region: &[usize], exclude: Option<Label>) -> Option<Label> {
    let mut counts = std::collections::BTreeMap::new();
    for &v in region {
        let l = labels[v];
        if Some(l) != exclude {
            *counts.entry(l).or_insert(0usize) += 1;
        }
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == best).map(|(l, _)| l)
}

/// Moves every `pack_region` precinct into one district (the region's
/// plurality label in `base`) and every `crack_region` precinct into a second
/// district (the plurality label of that region other than the pack label).
/// All other precincts keep their labels. The result must be contiguous and
/// within `pop_tol`.
pub fn plant_outlier(
    map: &PrecinctMap,
    base: &Plan,
    pack_region: &[usize],
    crack_region: &[usize],
    pop_tol: f64,
) -> Result<PlantedPlan> {
    let n = map.len();
    if base.labels().len() != n {
        return Err(Error::invalid("base plan covers a different map"));
    }
    if pack_region.iter().chain(crack_region).any(|&v| v >= n) {
        return Err(Error::invalid("region references a precinct outside the map"));
    }
    let mut in_pack = vec![false; n];
    for &v in pack_region {
        in_pack[v] = true;
    }
    if crack_region.iter().any(|&v| in_pack[v]) {
        return Err(Error::invalid("pack and crack regions overlap"));
    }
    let base_labels = base.labels();
    let pack_label = plurality(base_labels, pack_region, None);
    let crack_label = if crack_region.is_empty() {
        None
    } else {
        let from_region = plurality(base_labels, crack_region, pack_label);
        let adjacent = || {
            let mut near: Vec<Label> = crack_region
                .iter()
                .flat_map(|&v| map.neighbors(v))
                .map(|u| base_labels[u])
                .filter(|&l| Some(l) != pack_label)
                .collect();
            near.sort_unstable();
            near.first().copied()
        };
        Some(
            from_region
                .or_else(adjacent)
                .ok_or_else(|| Error::invalid("crack region has no district to move into"))?,
        )
    };

    let mut labels = base_labels.to_vec();
    if let Some(l) = pack_label {
        for &v in pack_region {
            labels[v] = l;
        }
    }
    if let Some(l) = crack_label {
        for &v in crack_region {
            labels[v] = l;
        }
    }
    let plan = Plan::new(labels, base.districts() as Label)
        .map_err(|e| Error::invalid(format!("perturbation empties a district: {e}")))?;
    let report = validate_plan(map, plan.view(), pop_tol);
    if !report.all_contiguous() {
        return Err(Error::invalid("perturbation breaks contiguity"));
    }
    if !report.balanced() {
        return Err(Error::invalid(format!(
            "perturbation breaks population balance (max deviation {:.4})",
            report.max_abs_deviation()
        )));
    }

    let members = |labels: &[Label], l: Label| -> Vec<usize> { (0..n).filter(|&v| labels[v] == l).collect() };
    let d = base.districts();
    let before: Vec<Vec<usize>> = (1..=d as Label).map(|l| members(base_labels, l)).collect();
    let after: Vec<Vec<usize>> = (1..=d as Label).map(|l| members(plan.labels(), l)).collect();
    let perturbed = (0..n)
        .map(|v| before[base_labels[v] as usize - 1] != after[plan.labels()[v] as usize - 1])
        .collect();
    Ok(PlantedPlan {
        plan,
        perturbed,
        pack_label,
        crack_label,
    })
}

/// Four quadrant districts on an even-sized grid: NW = 1, NE = 2, SW = 3, SE = 4.
pub fn quadrant_plan(rows: usize, cols: usize) -> Result<Plan> {
    if rows % 2 != 0 || cols % 2 != 0 || rows == 0 || cols == 0 {
        return Err(Error::invalid("quadrant plans need an even number of rows and columns"));
    }
    let labels = (0..rows * cols)
        .map(|v| {
            let (r, c) = (v / cols, v % cols);
            (1 + 2 * (r >= rows / 2) as Label + (c >= cols / 2) as Label) as Label
        })
        .collect();
    Plan::new(labels, 4)
}

/// Pack-and-crack of the northern half of a quadrant plan: the quarter of
/// the map's cells in the northern half nearest to `(row, col)` become one
/// district, the rest of the northern half the other. The southern districts
/// are untouched, so ground truth is exactly the northern half.
pub fn pack_crack_north(map: &PrecinctMap, rows: usize, cols: usize, center: (f64, f64), pop_tol: f64) -> Result<PlantedPlan> {
    if map.len() != rows * cols {
        return Err(Error::invalid("grid dimensions do not match the map"));
    }
    let base = quadrant_plan(rows, cols)?;
    let north: Vec<usize> = (0..rows / 2 * cols).collect();
    let mut by_distance: Vec<(f64, usize)> = north
        .iter()
        .map(|&v| {
            let (r, c) = ((v / cols) as f64, (v % cols) as f64);
            ((r - center.0).powi(2) + (c - center.1).powi(2), v)
        })
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let quarter = rows * cols / 4;
    let mut pack: Vec<usize> = by_distance[..quarter].iter().map(|&(_, v)| v).collect();
    let mut crack: Vec<usize> = by_distance[quarter..].iter().map(|&(_, v)| v).collect();
    pack.sort_unstable();
    crack.sort_unstable();
    plant_outlier(map, &base, &pack, &crack, pop_tol)
}
