//! Precinct p-values against projective distributions and pFDR-controlled
//! selection of precincts where a plan departs from its ensemble.
//!
//! For a plan `ξ` and precinct `v`, the upper p-value is
//! `(1 + #{ξ' ∈ S : f(ξ')_{ξ'(v)} ≥ f(ξ)_{ξ(v)}}) / n`, ties counted
//! inclusively. Null p-values are the same quantity for each ensemble
//! member, itself included. Selection follows the Storey–Tibshirani
//! estimate of the positive FDR, thresholded by a monotone linear
//! interpolant over a grid of candidate cutoffs.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Ensemble, PlanRef, PrecinctField, PrecinctMap};
use crate::projection::{normalize, project, projective_average_of, ProjectionSummary};
use crate::stats::{DistrictValues, Statistic};

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    Upper,
    Lower,
    TwoSided,
}

impl FromStr for Sidedness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(Sidedness::Upper),
            "lower" => Ok(Sidedness::Lower),
            "two" | "two_sided" | "two-sided" => Ok(Sidedness::TwoSided),
            other => Err(Error::invalid(format!("unknown sidedness \"{other}\""))),
        }
    }
}

impl fmt::Display for Sidedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sidedness::Upper => "upper",
            Sidedness::Lower => "lower",
            Sidedness::TwoSided => "two_sided",
        })
    }
}

/// Unclamped p-value for an exceedance count `count` (the `#{...}` term)
/// among `n` plans. Two-sided counts are `min(upper, lower)`.
#[inline]
pub fn raw_pvalue(count: u32, n: usize, side: Sidedness) -> f64 {
    let p = (1.0 + count as f64) / n as f64;
    match side {
        Sidedness::TwoSided => 2.0 * p,
        _ => p,
    }
}

#[inline]
pub fn pvalue(count: u32, n: usize, side: Sidedness) -> f64 {
    raw_pvalue(count, n, side).min(1.0)
}

/// Exceedance count of `x` in ascending `sorted`.
#[inline]
fn count_in_sorted(sorted: &[f64], x: f64, side: Sidedness) -> u32 {
    let n = sorted.len();
    let upper = || (n - sorted.partition_point(|&y| y < x)) as u32;
    let lower = || sorted.partition_point(|&y| y <= x) as u32;
    match side {
        Sidedness::Upper => upper(),
        Sidedness::Lower => lower(),
        Sidedness::TwoSided => upper().min(lower()),
    }
}

/// The projective distribution at every precinct, precinct-major: row `v`
/// holds `f(ξ_i)_{ξ_i(v)}` for `i = 0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectiveDistribution {
    precincts: usize,
    plans: usize,
    values: Vec<f64>,
}

impl ProjectiveDistribution {
    pub fn from_ensemble(ensemble: &Ensemble, values: &DistrictValues) -> Self {
        assert_eq!(values.plans(), ensemble.len());
        let v_count = ensemble.map().len();
        let n = ensemble.len();
        let mut data = vec![0.0; v_count * n];
        data.par_chunks_mut(CHUNK * n)
            .enumerate()
            .for_each(|(c, block)| {
                let start = c * CHUNK;
                let rows = block.len() / n;
                for (i, plan) in ensemble.plans().enumerate() {
                    let dv = values.row(i);
                    let labels = &plan.labels()[start..start + rows];
                    for (r, &l) in labels.iter().enumerate() {
                        block[r * n + i] = dv[l as usize - 1];
                    }
                }
            });
        ProjectiveDistribution {
            precincts: v_count,
            plans: n,
            values: data,
        }
    }

    pub fn from_rows(precincts: usize, plans: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), precincts * plans);
        ProjectiveDistribution {
            precincts,
            plans,
            values,
        }
    }

    pub fn precincts(&self) -> usize {
        self.precincts
    }

    pub fn plans(&self) -> usize {
        self.plans
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.values[v * self.plans..(v + 1) * self.plans]
    }

    /// Projected values of plan `i` at every precinct.
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.precincts).map(|v| self.values[v * self.plans + i]).collect()
    }

    /// The distribution with plan `i` left out.
    pub fn without_plan(&self, i: usize) -> Self {
        assert!(self.plans >= 2 && i < self.plans);
        let n = self.plans;
        let mut values = Vec::with_capacity(self.precincts * (n - 1));
        for row in self.values.chunks_exact(n) {
            values.extend_from_slice(&row[..i]);
            values.extend_from_slice(&row[i + 1..]);
        }
        ProjectiveDistribution {
            precincts: self.precincts,
            plans: n - 1,
            values,
        }
    }
}

/// Per-precinct p-values of one plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueField {
    /// Clamped to at most 1.
    pub values: PrecinctField,
    /// Before clamping; up to `(n + 1) / n` (twice that when two-sided).
    pub raw: Vec<f64>,
    pub counts: Vec<u32>,
    pub plans: usize,
    pub sidedness: Sidedness,
}

impl PValueField {
    fn from_counts(counts: Vec<u32>, plans: usize, sidedness: Sidedness) -> Self {
        let raw: Vec<f64> = counts.iter().map(|&c| raw_pvalue(c, plans, sidedness)).collect();
        let values = PrecinctField::from_values(raw.iter().map(|p| p.min(1.0)).collect());
        PValueField {
            values,
            raw,
            counts,
            plans,
            sidedness,
        }
    }

    pub fn get(&self, v: usize) -> f64 {
        self.values.get(v).expect("p-values are never missing")
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// p-values of a plan whose projected values are `observed`.
pub fn pvalues_against(observed: &[f64], dist: &ProjectiveDistribution, side: Sidedness) -> PValueField {
    assert_eq!(observed.len(), dist.precincts());
    let counts = observed
        .par_iter()
        .enumerate()
        .map(|(v, &x)| {
            let row = dist.row(v);
            let ge = row.iter().filter(|&&y| y >= x).count() as u32;
            let le = row.iter().filter(|&&y| y <= x).count() as u32;
            match side {
                Sidedness::Upper => ge,
                Sidedness::Lower => le,
                Sidedness::TwoSided => ge.min(le),
            }
        })
        .collect();
    PValueField::from_counts(counts, dist.plans(), side)
}

pub fn precinct_pvalues(
    map: &PrecinctMap,
    plan: PlanRef<'_>,
    ensemble: &Ensemble,
    stat: &Statistic,
    side: Sidedness,
) -> Result<PValueField> {
    let values = DistrictValues::evaluate(ensemble, stat)?;
    let dist = ProjectiveDistribution::from_ensemble(ensemble, &values);
    let observed = observed_projection(map, plan, stat)?;
    Ok(pvalues_against(&observed, &dist, side))
}

fn observed_projection(map: &PrecinctMap, plan: PlanRef<'_>, stat: &Statistic) -> Result<Vec<f64>> {
    Ok(project(plan, &stat.evaluate(map, plan)?).to_dense())
}

/// Null p-values of every ensemble plan, stored as exceedance counts,
/// precinct-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NullPValues {
    precincts: usize,
    plans: usize,
    sidedness: Sidedness,
    counts: Vec<u32>,
}

impl NullPValues {
    pub fn precincts(&self) -> usize {
        self.precincts
    }

    pub fn plans(&self) -> usize {
        self.plans
    }

    pub fn sidedness(&self) -> Sidedness {
        self.sidedness
    }

    pub fn count(&self, v: usize, i: usize) -> u32 {
        self.counts[v * self.plans + i]
    }

    pub fn pvalue(&self, v: usize, i: usize) -> f64 {
        pvalue(self.count(v, i), self.plans, self.sidedness)
    }

    pub fn plan_field(&self, i: usize) -> PValueField {
        let counts = (0..self.precincts).map(|v| self.count(v, i)).collect();
        PValueField::from_counts(counts, self.plans, self.sidedness)
    }
}

/// Each row of the distribution is sorted once; each plan's count is then a
/// binary search, for `O(|V| n log n)` overall.
pub fn null_pvalue_matrix(dist: &ProjectiveDistribution, side: Sidedness) -> NullPValues {
    let n = dist.plans();
    let mut counts = vec![0u32; dist.precincts() * n];
    counts
        .par_chunks_mut(n)
        .enumerate()
        .for_each_init(Vec::new, |sorted, (v, out)| {
            let row = dist.row(v);
            sorted.clear();
            sorted.extend_from_slice(row);
            sorted.sort_unstable_by(f64::total_cmp);
            for (slot, &x) in out.iter_mut().zip(row) {
                *slot = count_in_sorted(sorted, x, side);
            }
        });
    NullPValues {
        precincts: dist.precincts(),
        plans: n,
        sidedness: side,
        counts,
    }
}

/// Ascending candidate thresholds in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaGrid(Vec<f64>);

impl GammaGrid {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::invalid("empty gamma grid"));
        }
        if gammas.iter().any(|&g| !(g > 0.0 && g <= 1.0)) {
            return Err(Error::invalid("gamma grid values must lie in (0, 1]"));
        }
        if gammas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("gamma grid must be strictly increasing"));
        }
        Ok(GammaGrid(gammas))
    }

    /// `{0.5}` together with 40 log-spaced points from `1/(2n)` to 1.
    pub fn default_for(n: usize) -> Self {
        let lo = (1.0 / (2.0 * n.max(1) as f64)).ln();
        let mut gammas: Vec<f64> = (0..40).map(|k| (lo * (1.0 - k as f64 / 39.0)).exp()).collect();
        gammas[0] = 1.0 / (2.0 * n.max(1) as f64);
        gammas[39] = 1.0;
        gammas.push(0.5);
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        GammaGrid(gammas)
    }

    /// Splits each cell into `factor` equal steps.
    pub fn refined(&self, factor: usize) -> Self {
        let mut out = vec![self.0[0]];
        for w in self.0.windows(2) {
            for s in 1..=factor {
                out.push(w[0] + (w[1] - w[0]) * s as f64 / factor as f64);
            }
        }
        *out.last_mut().unwrap() = *self.0.last().unwrap();
        out.dedup();
        GammaGrid(out)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, gamma: f64) -> Option<usize> {
        self.0.iter().position(|&g| g == gamma)
    }
}

/// `R̄0` on the grid plus the per-plan counts behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct NullPValueSummary {
    pub gammas: Vec<f64>,
    pub rbar0: Vec<f64>,
    /// `plans × gammas`, plan-major: `#{v : p_v(ξ_i) ≤ γ_g}`.
    pub per_plan: Vec<u32>,
}

impl NullPValueSummary {
    pub fn plan_counts(&self, i: usize) -> &[u32] {
        let g = self.gammas.len();
        &self.per_plan[i * g..(i + 1) * g]
    }
}

/// `R(γ)` for the observed plan and `R̄0(γ)` for the ensemble.
pub fn rejection_counts(
    observed: &PValueField,
    nulls: &NullPValues,
    grid: &GammaGrid,
) -> Result<(Vec<usize>, NullPValueSummary)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty gamma grid"));
    }
    if observed.len() != nulls.precincts() {
        return Err(Error::invalid("observed p-values and null p-values cover different maps"));
    }
    let gammas = grid.values();
    let g_len = gammas.len();
    let r: Vec<usize> = gammas
        .iter()
        .map(|&g| (0..observed.len()).filter(|&v| observed.get(v) <= g).count())
        .collect();

    let n = nulls.plans();
    let side = nulls.sidedness();
    // first grid index admitting count c; g_len when none does
    let first: Vec<usize> = (0..=n as u32)
        .map(|c| {
            let p = pvalue(c, n, side);
            gammas.partition_point(|&g| g < p)
        })
        .collect();
    let width = g_len + 1;
    let hist = nulls
        .counts
        .par_chunks(CHUNK * n)
        .fold(
            || vec![0u32; n * width],
            |mut acc, block| {
                for row in block.chunks_exact(n) {
                    for (i, &c) in row.iter().enumerate() {
                        acc[i * width + first[c as usize]] += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u32; n * width],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let mut per_plan = vec![0u32; n * g_len];
    let mut totals = vec![0u64; g_len];
    for i in 0..n {
        let mut running = 0;
        for g in 0..g_len {
            running += hist[i * width + g];
            per_plan[i * g_len + g] = running;
            totals[g] += running as u64;
        }
    }
    let rbar0 = totals.iter().map(|&t| t as f64 / n as f64).collect();
    Ok((
        r,
        NullPValueSummary {
            gammas: gammas.to_vec(),
            rbar0,
            per_plan,
        },
    ))
}

/// `(|V| - R(0.5)) / (|V| - R̄0(0.5))`, clamped to `(0, 1]`. A nonpositive
/// numerator or denominator gives 1.
pub fn estimate_pi0(r_half: usize, rbar0_half: f64, precincts: usize) -> f64 {
    let den = precincts as f64 - rbar0_half;
    let num = precincts as f64 - r_half as f64;
    if den <= 0.0 || num <= 0.0 {
        return 1.0;
    }
    (num / den).min(1.0)
}

/// `(γ, π̂0 R̄0(γ) / R(γ))`; `+∞` where `R(γ) = 0`.
pub fn pfdr_curve(pi0: f64, r: &[usize], rbar0: &[f64], grid: &GammaGrid) -> Vec<(f64, f64)> {
    assert_eq!(r.len(), grid.len());
    assert_eq!(rbar0.len(), grid.len());
    grid.values()
        .iter()
        .zip(r.iter().zip(rbar0))
        .map(|(&g, (&r, &r0))| {
            let pfdr = if r == 0 { f64::INFINITY } else { pi0 * r0 / r as f64 };
            (g, pfdr)
        })
        .collect()
}

/// Largest `γ` whose interpolated pFDR estimate is at most `alpha`.
///
/// The curve is first replaced by its running minimum from the right, which
/// is nondecreasing in `γ`, then interpolated linearly between grid points.
/// Returns `None` when no grid point qualifies or `alpha <= 0`.
pub fn select_threshold(curve: &[(f64, f64)], alpha: f64) -> Option<f64> {
    if curve.is_empty() || alpha.is_nan() || alpha <= 0.0 {
        return None;
    }
    let mut envelope: Vec<f64> = curve.iter().map(|&(_, p)| p).collect();
    for k in (0..envelope.len() - 1).rev() {
        envelope[k] = envelope[k].min(envelope[k + 1]);
    }
    let k = envelope.iter().rposition(|&e| e <= alpha)?;
    let g0 = curve[k].0;
    if k + 1 == curve.len() {
        return Some(g0);
    }
    let (g1, e0, e1) = (curve[k + 1].0, envelope[k], envelope[k + 1]);
    if !e1.is_finite() {
        return Some(g0);
    }
    Some(g0 + (alpha - e0) / (e1 - e0) * (g1 - g0))
}

/// Everything up to the choice of `alpha`: p-values, counts, `π̂0` and the
/// pFDR curve. Selecting at several levels reuses one analysis.
#[derive(Debug, Clone)]
pub struct StAnalysis {
    pub pvalues: PValueField,
    pub grid: GammaGrid,
    pub r: Vec<usize>,
    pub null_summary: NullPValueSummary,
    pub pi0_hat: f64,
    pub curve: Vec<(f64, f64)>,
}

impl StAnalysis {
    pub fn compute(
        observed: &[f64],
        dist: &ProjectiveDistribution,
        side: Sidedness,
        grid: Option<&GammaGrid>,
    ) -> Result<Self> {
        let grid = grid.cloned().unwrap_or_else(|| GammaGrid::default_for(dist.plans()));
        let half = grid
            .position(0.5)
            .ok_or_else(|| Error::invalid("gamma grid must contain 0.5"))?;
        let pvalues = pvalues_against(observed, dist, side);
        let nulls = null_pvalue_matrix(dist, side);
        let (r, null_summary) = rejection_counts(&pvalues, &nulls, &grid)?;
        let pi0_hat = estimate_pi0(r[half], null_summary.rbar0[half], dist.precincts());
        let curve = pfdr_curve(pi0_hat, &r, &null_summary.rbar0, &grid);
        Ok(StAnalysis {
            pvalues,
            grid,
            r,
            null_summary,
            pi0_hat,
            curve,
        })
    }

    pub fn select(&self, alpha: f64) -> SelectionResult {
        let gamma_hat = select_threshold(&self.curve, alpha);
        let selected: Vec<usize> = match gamma_hat {
            Some(g) => (0..self.pvalues.len()).filter(|&v| self.pvalues.get(v) <= g).collect(),
            None => Vec::new(),
        };
        SelectionResult {
            alpha,
            pi0_hat: self.pi0_hat,
            gamma_hat,
            curve: self.curve.clone(),
            discoveries: selected.len(),
            selected,
            pvalues: self.pvalues.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub alpha: f64,
    pub pi0_hat: f64,
    pub gamma_hat: Option<f64>,
    pub curve: Vec<(f64, f64)>,
    /// Precinct indices with `p_v ≤ γ̂`, ascending.
    pub selected: Vec<usize>,
    pub discoveries: usize,
    pub pvalues: PValueField,
}

impl SelectionResult {
    pub fn selected_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.pvalues.len()];
        for &v in &self.selected {
            mask[v] = true;
        }
        mask
    }

    /// JSON sidecar; infinite pFDR estimates are written as null.
    pub fn sidecar(&self) -> serde_json::Value {
        let curve: Vec<serde_json::Value> = self
            .curve
            .iter()
            .map(|&(g, p)| serde_json::json!([g, if p.is_finite() { Some(p) } else { None }]))
            .collect();
        serde_json::json!({
            "alpha": self.alpha,
            "pi0_hat": self.pi0_hat,
            "gamma_hat": self.gamma_hat,
            "curve": curve,
        })
    }
}

/// Full selection procedure for a comparison plan against an ensemble.
pub fn st_procedure(
    map: &PrecinctMap,
    plan0: PlanRef<'_>,
    ensemble: &Ensemble,
    stat: &Statistic,
    alpha: f64,
    side: Sidedness,
    grid: Option<&GammaGrid>,
) -> Result<SelectionResult> {
    let values = DistrictValues::evaluate(ensemble, stat)?;
    let dist = ProjectiveDistribution::from_ensemble(ensemble, &values);
    let observed = observed_projection(map, plan0, stat)?;
    Ok(StAnalysis::compute(&observed, &dist, side, grid)?.select(alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FwerRow {
    pub alpha: f64,
    pub holdouts: usize,
    pub rejections: usize,
    pub fwer: f64,
    /// Binomial standard error `sqrt(fwer (1 - fwer) / holdouts)`.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FwerReport {
    pub holdout_plans: Vec<usize>,
    pub rows: Vec<FwerRow>,
}

/// Leave-one-out check of family-wise error under the global null: each
/// held-out plan is treated as the comparison plan against the others.
pub fn fwer_validation(
    ensemble: &Ensemble,
    values: &DistrictValues,
    alphas: &[f64],
    side: Sidedness,
    holdout_count: usize,
    seed: u64,
) -> Result<FwerReport> {
    let n = ensemble.len();
    if holdout_count == 0 {
        return Ok(FwerReport {
            holdout_plans: Vec::new(),
            rows: Vec::new(),
        });
    }
    if holdout_count > n / 2 {
        return Err(Error::invalid(format!(
            "holdout count {holdout_count} exceeds half the ensemble ({n} plans)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let holdout_plans = index::sample(&mut rng, n, holdout_count).into_vec();
    let dist = ProjectiveDistribution::from_ensemble(ensemble, values);
    let grid = GammaGrid::default_for(n - 1);
    let hits: Vec<Vec<bool>> = holdout_plans
        .par_iter()
        .map(|&h| {
            let observed = dist.column(h);
            let rest = dist.without_plan(h);
            let analysis = StAnalysis::compute(&observed, &rest, side, Some(&grid))?;
            Ok(alphas.iter().map(|&a| analysis.select(a).discoveries > 0).collect())
        })
        .collect::<Result<_>>()?;
    let m = holdout_count as f64;
    let rows = alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let rejections = hits.iter().filter(|h| h[k]).count();
            let fwer = rejections as f64 / m;
            FwerRow {
                alpha,
                holdouts: holdout_count,
                rejections,
                fwer,
                se: (fwer * (1.0 - fwer) / m).sqrt(),
            }
        })
        .collect();
    Ok(FwerReport { holdout_plans, rows })
}

/// Contrast panels with the comparison plan hidden among sampled plans.
#[derive(Debug, Clone, PartialEq)]
pub struct Lineup {
    pub panels: Vec<PrecinctField>,
    /// Position of the comparison plan's panel.
    pub answer: usize,
    /// Ensemble index behind each panel; `None` at the answer.
    pub sources: Vec<Option<usize>>,
}

/// Samples `k` ensemble plans without replacement, contrasts each against the
/// ensemble, and inserts the comparison contrast at a seeded uniform position.
/// With `normalized`, panels are divided by the projective sd.
pub fn lineup(
    ensemble: &Ensemble,
    values: &DistrictValues,
    plan0_projection: &PrecinctField,
    k: usize,
    seed: u64,
    normalized: bool,
) -> Result<Lineup> {
    let n = ensemble.len();
    if k > n {
        return Err(Error::invalid(format!("lineup of {k} plans drawn from an ensemble of {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, n, k).into_vec();
    let answer = rng.gen_range(0..=k as u32) as usize;
    let summary: ProjectionSummary = projective_average_of(ensemble, values);
    let panel = |projection: &PrecinctField| {
        let contrast = projection.minus(&summary.mean);
        if normalized {
            normalize(&contrast, &summary.sd).field
        } else {
            contrast
        }
    };
    let mut panels = Vec::with_capacity(k + 1);
    let mut sources = Vec::with_capacity(k + 1);
    for &i in &picks {
        panels.push(panel(&project(ensemble.plan(i), values.row(i))));
        sources.push(Some(i));
    }
    panels.insert(answer, panel(plan0_projection));
    sources.insert(answer, None);
    Ok(Lineup {
        panels,
        answer,
        sources,
    })
}
