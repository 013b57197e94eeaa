//! District-level summary statistics.
//!
//! Each statistic is a precinct-set summary applied to every district of a
//! plan, giving one value per district. Sums within a district always run in
//! map index order, so results do not depend on how plans are scheduled.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Ensemble, PlanRef, PrecinctMap, AREA, EXTERIOR_BOUNDARY};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatKind {
    /// `Σ num / Σ (num + others...)`; the vote-share convention.
    RatioOfSums,
    /// `Σ num / Σ den` with a separate denominator column.
    WeightedShare,
    Sum,
    /// `4πA / P²` from summed areas and discrete boundary lengths.
    PolsbyPopper,
}

impl StatKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StatKind::RatioOfSums => "ratio_of_sums",
            StatKind::WeightedShare => "weighted_share",
            StatKind::Sum => "sum",
            StatKind::PolsbyPopper => "polsby_popper",
        }
    }
}

impl FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ratio_of_sums" => StatKind::RatioOfSums,
            "weighted_share" => StatKind::WeightedShare,
            "sum" => StatKind::Sum,
            "polsby_popper" => StatKind::PolsbyPopper,
            other => return Err(Error::invalid(format!("unknown statistic kind \"{other}\""))),
        })
    }
}

/// Parsed form of `kind:name:col1[:col2...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatisticSpec {
    pub kind: StatKind,
    pub name: String,
    pub columns: Vec<String>,
}

impl StatisticSpec {
    pub fn new(kind: StatKind, name: impl Into<String>, columns: &[&str]) -> Self {
        StatisticSpec {
            kind,
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn dem_share() -> Self {
        StatisticSpec::new(StatKind::RatioOfSums, "dem_share", &["votes_dem", "votes_rep"])
    }

    pub fn polsby_popper() -> Self {
        StatisticSpec::new(StatKind::PolsbyPopper, "polsby_popper", &[])
    }
}

impl FromStr for StatisticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind: StatKind = parts.next().unwrap_or_default().parse()?;
        let name = parts
            .next()
            .filter(|n| !n.is_empty())
            .ok_or_else(|| Error::invalid(format!("statistic \"{s}\" has no name")))?
            .to_string();
        let columns: Vec<String> = parts.map(str::to_string).collect();
        let arity_ok = match kind {
            StatKind::RatioOfSums => columns.len() >= 2,
            StatKind::WeightedShare => columns.len() == 2,
            StatKind::Sum => columns.len() == 1,
            StatKind::PolsbyPopper => columns.is_empty(),
        };
        if !arity_ok || columns.iter().any(String::is_empty) {
            return Err(Error::invalid(format!(
                "statistic \"{s}\": wrong column list for {}",
                kind.as_str()
            )));
        }
        Ok(StatisticSpec { kind, name, columns })
    }
}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.name)?;
        for c in &self.columns {
            write!(f, ":{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Kind {
    RatioOfSums { num: usize, others: Vec<usize> },
    WeightedShare { num: usize, den: usize },
    Sum { column: usize },
    PolsbyPopper { area: usize, exterior: usize },
    Affine { terms: Vec<(f64, Statistic)>, offset: f64 },
}

/// A statistic resolved against one map's columns.
#[derive(Debug, Clone)]
pub struct Statistic {
    name: String,
    kind: Kind,
}

impl Statistic {
    /// Resolves the column names; fails here, before any scan, when one is absent.
    pub fn compile(map: &PrecinctMap, spec: &StatisticSpec) -> Result<Self> {
        let col = |name: &str| {
            map.column_index(name).ok_or_else(|| {
                Error::invalid(format!("statistic \"{}\" needs missing column \"{name}\"", spec.name))
            })
        };
        let kind = match spec.kind {
            StatKind::RatioOfSums => Kind::RatioOfSums {
                num: col(&spec.columns[0])?,
                others: spec.columns[1..].iter().map(|c| col(c)).collect::<Result<_>>()?,
            },
            StatKind::WeightedShare => Kind::WeightedShare {
                num: col(&spec.columns[0])?,
                den: col(&spec.columns[1])?,
            },
            StatKind::Sum => Kind::Sum {
                column: col(&spec.columns[0])?,
            },
            StatKind::PolsbyPopper => Kind::PolsbyPopper {
                area: col(AREA)?,
                exterior: col(EXTERIOR_BOUNDARY)?,
            },
        };
        Ok(Statistic {
            name: spec.name.clone(),
            kind,
        })
    }

    /// `offset + Σ weight·statistic` district by district. Test-only surface
    /// for checking linearity of projective averages.
    pub fn affine(name: impl Into<String>, terms: Vec<(f64, Statistic)>, offset: f64) -> Self {
        Statistic {
            name: name.into(),
            kind: Kind::Affine { terms, offset },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `f(ξ)`: one value per district, index `j` holding district `j + 1`.
    pub fn evaluate(&self, map: &PrecinctMap, plan: PlanRef<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; plan.districts()];
        self.evaluate_into(map, plan, &mut out)?;
        Ok(out)
    }

    pub fn evaluate_into(&self, map: &PrecinctMap, plan: PlanRef<'_>, out: &mut [f64]) -> Result<()> {
        let d = plan.districts();
        assert_eq!(out.len(), d);
        assert_eq!(plan.labels().len(), map.len(), "plan over a different map");
        match &self.kind {
            Kind::RatioOfSums { num, others } => {
                let mut den = vec![0.0; d];
                sum_by_district(map.column_at(*num), plan, out);
                den.copy_from_slice(out);
                let mut extra = vec![0.0; d];
                for &c in others {
                    sum_by_district(map.column_at(c), plan, &mut extra);
                    for (a, b) in den.iter_mut().zip(&extra) {
                        *a += b;
                    }
                }
                divide(out, &den, "denominator")
            }
            Kind::WeightedShare { num, den } => {
                sum_by_district(map.column_at(*num), plan, out);
                let mut denominator = vec![0.0; d];
                sum_by_district(map.column_at(*den), plan, &mut denominator);
                divide(out, &denominator, "denominator")
            }
            Kind::Sum { column } => {
                sum_by_district(map.column_at(*column), plan, out);
                Ok(())
            }
            Kind::PolsbyPopper { area, exterior } => {
                sum_by_district(map.column_at(*area), plan, out);
                let mut perimeter = vec![0.0; d];
                sum_by_district(map.column_at(*exterior), plan, &mut perimeter);
                for e in map.edges() {
                    let (ja, jb) = (plan.district_of(e.a), plan.district_of(e.b));
                    if ja != jb {
                        perimeter[ja] += e.shared_length;
                        perimeter[jb] += e.shared_length;
                    }
                }
                for (j, (a, p)) in out.iter_mut().zip(&perimeter).enumerate() {
                    if *p <= 0.0 {
                        return Err(Error::ZeroDenominator {
                            plan: None,
                            district: j + 1,
                            what: "perimeter",
                        });
                    }
                    *a = 4.0 * PI * *a / (p * p);
                }
                Ok(())
            }
            Kind::Affine { terms, offset } => {
                out.fill(*offset);
                let mut part = vec![0.0; d];
                for (w, stat) in terms {
                    stat.evaluate_into(map, plan, &mut part)?;
                    for (o, x) in out.iter_mut().zip(&part) {
                        *o += w * x;
                    }
                }
                Ok(())
            }
        }
    }
}

fn sum_by_district(column: &[f64], plan: PlanRef<'_>, out: &mut [f64]) {
    out.fill(0.0);
    for (v, x) in column.iter().enumerate() {
        out[plan.district_of(v)] += x;
    }
}

fn divide(num: &mut [f64], den: &[f64], what: &'static str) -> Result<()> {
    for (j, (a, b)) in num.iter_mut().zip(den).enumerate() {
        if *b <= 0.0 {
            return Err(Error::ZeroDenominator {
                plan: None,
                district: j + 1,
                what,
            });
        }
        *a /= b;
    }
    Ok(())
}

/// `f(ξ)` for one plan.
pub fn district_summary(map: &PrecinctMap, plan: PlanRef<'_>, stat: &Statistic) -> Result<Vec<f64>> {
    stat.evaluate(map, plan)
}

/// District values of every plan in an ensemble, `n × d`, plan-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictValues {
    districts: usize,
    values: Vec<f64>,
}

impl DistrictValues {
    pub fn evaluate(ensemble: &Ensemble, stat: &Statistic) -> Result<Self> {
        let d = ensemble.districts();
        let map = ensemble.map();
        let mut values = vec![0.0; ensemble.len() * d];
        values
            .par_chunks_mut(d)
            .enumerate()
            .try_for_each(|(i, out)| {
                stat.evaluate_into(map, ensemble.plan(i), out)
                    .map_err(|e| e.in_plan(i))
            })?;
        Ok(DistrictValues { districts: d, values })
    }

    pub fn from_rows(districts: usize, values: Vec<f64>) -> Self {
        assert!(districts > 0 && values.len() % districts == 0);
        DistrictValues { districts, values }
    }

    pub fn plans(&self) -> usize {
        self.values.len() / self.districts
    }

    pub fn districts(&self) -> usize {
        self.districts
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.districts..(i + 1) * self.districts]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.districts)
    }

    /// Applies `f` to every district value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        DistrictValues {
            districts: self.districts,
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn without(&self, i: usize) -> Self {
        let d = self.districts;
        let mut values = Vec::with_capacity(self.values.len() - d);
        values.extend_from_slice(&self.values[..i * d]);
        values.extend_from_slice(&self.values[(i + 1) * d..]);
        DistrictValues { districts: d, values }
    }
}

/// Ascending sort; equal values keep their relative order.
pub fn order_statistics(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
}

/// Probabilities reported for order-statistic boxplots.
pub const BOXPLOT_PROBS: [f64; 7] = [0.0, 0.025, 0.25, 0.5, 0.75, 0.975, 1.0];

/// Linear-interpolation quantile (Hyndman–Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// For each rank `r` (ascending), quantiles across plans of the `r`-th
/// smallest district value. Result is `probs.len()` rows of `d` values.
pub fn order_statistic_quantiles(values: &DistrictValues, probs: &[f64]) -> Vec<Vec<f64>> {
    let d = values.districts();
    let sorted_rows: Vec<Vec<f64>> = values.rows().map(order_statistics).collect();
    let by_rank: Vec<Vec<f64>> = (0..d)
        .map(|r| {
            let mut col: Vec<f64> = sorted_rows.iter().map(|row| row[r]).collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();
    probs
        .iter()
        .map(|&p| by_rank.iter().map(|col| quantile_sorted(col, p)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::grid;
    use crate::model::{Column, Plan, PrecinctMap, VOTES_DEM, VOTES_REP};

    fn with_votes(map: &PrecinctMap, dem: &[f64], rep: &[f64]) -> PrecinctMap {
        let mut columns = map.columns().to_vec();
        columns.push(Column { name: VOTES_DEM.into(), values: dem.to_vec() });
        columns.push(Column { name: VOTES_REP.into(), values: rep.to_vec() });
        PrecinctMap::new(map.ids().to_vec(), columns, map.edges().to_vec(), None).unwrap()
    }

    #[test]
    fn parses_cli_specs() {
        let s: StatisticSpec = "ratio_of_sums:dem_share:votes_dem:votes_rep".parse().unwrap();
        assert_eq!(s, StatisticSpec::dem_share());
        assert_eq!(s.to_string(), "ratio_of_sums:dem_share:votes_dem:votes_rep");
        assert!("polsby_popper:pp".parse::<StatisticSpec>().is_ok());
        assert!("sum:pop".parse::<StatisticSpec>().is_err());
        assert!("weighted_share:w:a".parse::<StatisticSpec>().is_err());
        assert!("median:x:a".parse::<StatisticSpec>().is_err());
    }

    #[test]
    fn single_district_dem_share_is_statewide() {
        let m = with_votes(&grid(2, 2, &[10.0; 4]), &[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]);
        let stat = Statistic::compile(&m, &StatisticSpec::dem_share()).unwrap();
        let plan = Plan::new(vec![1; 4], 1).unwrap();
        assert_eq!(stat.evaluate(&m, plan.view()).unwrap(), vec![10.0 / 20.0]);
    }

    #[test]
    fn polsby_popper_unit_square() {
        let m = grid(1, 1, &[1.0]);
        let stat = Statistic::compile(&m, &StatisticSpec::polsby_popper()).unwrap();
        let plan = Plan::new(vec![1], 1).unwrap();
        let pp = stat.evaluate(&m, plan.view()).unwrap();
        assert!((pp[0] - 0.785_398_163_4).abs() < 1e-10);
    }

    #[test]
    fn polsby_popper_counts_crossing_edges() {
        let m = grid(1, 2, &[1.0, 1.0]);
        let stat = Statistic::compile(&m, &StatisticSpec::polsby_popper()).unwrap();
        let plan = Plan::new(vec![1, 2], 2).unwrap();
        let pp = stat.evaluate(&m, plan.view()).unwrap();
        for x in pp {
            assert!((x - PI / 4.0).abs() < 1e-15);
        }
        // merged: A = 2, P = 6
        let merged = Plan::new(vec![1, 1], 1).unwrap();
        let pp = stat.evaluate(&m, merged.view()).unwrap();
        assert!((pp[0] - 8.0 * PI / 36.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_names_district() {
        let m = with_votes(&grid(1, 2, &[1.0, 1.0]), &[0.0, 1.0], &[0.0, 1.0]);
        let stat = Statistic::compile(&m, &StatisticSpec::dem_share()).unwrap();
        let plan = Plan::new(vec![1, 2], 2).unwrap();
        let err = stat.evaluate(&m, plan.view()).unwrap_err();
        assert_eq!(err.to_string(), "district 1: denominator is zero");
    }

    #[test]
    fn missing_column_fails_at_compile_time() {
        let m = grid(1, 2, &[1.0, 1.0]);
        let err = Statistic::compile(&m, &StatisticSpec::dem_share()).unwrap_err();
        assert!(err.to_string().contains("votes_dem"), "{err}");
    }

    #[test]
    fn order_statistics_sorts() {
        assert_eq!(order_statistics(&[0.5, 0.3, 0.9]), vec![0.3, 0.5, 0.9]);
        assert_eq!(order_statistics(&[0.2; 3]), vec![0.2; 3]);
    }

    #[test]
    fn type7_quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert!((quantile_sorted(&xs, 0.25) - 1.75).abs() < 1e-15);
        assert_eq!(quantile_sorted(&[7.0], 0.975), 7.0);
    }
}
