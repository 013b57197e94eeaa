//! Projection of district values onto precincts.
//!
//! The projective distribution at precinct `v` is the list, over plans, of
//! the value of whichever district contains `v`. Its mean is the projective
//! average; a single plan's projection minus that mean is the projective
//! contrast.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Ensemble, PlanRef, PrecinctField, PrecinctMap};
use crate::stats::{DistrictValues, Statistic};

/// Precincts handled by one worker during a scan.
const CHUNK: usize = 512;

/// Welford's online mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OnlineMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl OnlineMoments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Divide-by-`n` variance.
    pub fn population_variance(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn population_sd(&self) -> f64 {
        self.population_variance().sqrt()
    }
}

/// Maps each precinct to the value of its district.
pub fn project(plan: PlanRef<'_>, district_values: &[f64]) -> PrecinctField {
    assert_eq!(district_values.len(), plan.districts(), "one value per district");
    PrecinctField::from_values(
        (0..plan.labels().len())
            .map(|v| district_values[plan.district_of(v)])
            .collect(),
    )
}

/// Mean and population standard deviation of the projective distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSummary {
    pub mean: PrecinctField,
    pub sd: PrecinctField,
    pub n: usize,
}

pub fn projective_average(ensemble: &Ensemble, stat: &Statistic) -> Result<ProjectionSummary> {
    let values = DistrictValues::evaluate(ensemble, stat)?;
    Ok(projective_average_of(ensemble, &values))
}

/// Streaming pass over plans for precomputed district values. Work is split
/// across precincts; each precinct accumulates in plan order.
pub fn projective_average_of(ensemble: &Ensemble, values: &DistrictValues) -> ProjectionSummary {
    assert_eq!(values.plans(), ensemble.len());
    let v_count = ensemble.map().len();
    let mut moments = vec![OnlineMoments::default(); v_count];
    moments
        .par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let start = c * CHUNK;
            for (i, plan) in ensemble.plans().enumerate() {
                let row = values.row(i);
                let labels = &plan.labels()[start..start + chunk.len()];
                for (m, &l) in chunk.iter_mut().zip(labels) {
                    m.push(row[l as usize - 1]);
                }
            }
        });
    ProjectionSummary {
        mean: PrecinctField::from_values(moments.iter().map(OnlineMoments::mean).collect()),
        sd: PrecinctField::from_values(moments.iter().map(OnlineMoments::population_sd).collect()),
        n: ensemble.len(),
    }
}

/// Projection of `plan0` minus the ensemble's projective average.
pub fn projective_contrast(
    map: &PrecinctMap,
    plan0: PlanRef<'_>,
    ensemble: &Ensemble,
    stat: &Statistic,
) -> Result<PrecinctField> {
    let summary = projective_average(ensemble, stat)?;
    let own = project(plan0, &stat.evaluate(map, plan0)?);
    Ok(own.minus(&summary.mean))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedContrast {
    pub field: PrecinctField,
    /// Precincts left missing because the contrast was nonzero where sd = 0.
    pub undefined: usize,
}

/// Contrast divided by sd; `0/0` is 0 and `x/0` is missing.
pub fn normalize(contrast: &PrecinctField, sd: &PrecinctField) -> NormalizedContrast {
    assert_eq!(contrast.len(), sd.len());
    let mut undefined = 0;
    let values = contrast
        .values()
        .iter()
        .zip(sd.values())
        .map(|(c, s)| {
            let (c, s) = ((*c)?, (*s)?);
            if s > 0.0 {
                Some(c / s)
            } else if c == 0.0 {
                Some(0.0)
            } else {
                undefined += 1;
                None
            }
        })
        .collect();
    NormalizedContrast {
        field: PrecinctField::new(values),
        undefined,
    }
}

pub fn normalized_contrast(
    map: &PrecinctMap,
    plan0: PlanRef<'_>,
    ensemble: &Ensemble,
    stat: &Statistic,
) -> Result<NormalizedContrast> {
    let summary = projective_average(ensemble, stat)?;
    let own = project(plan0, &stat.evaluate(map, plan0)?);
    Ok(normalize(&own.minus(&summary.mean), &summary.sd))
}

/// Weighted mean of `field` within each label of `regions`. Missing field
/// entries drop out of both numerator and denominator.
pub fn aggregate_by(regions: &[i64], field: &PrecinctField, weights: &[f64]) -> Result<BTreeMap<i64, f64>> {
    assert_eq!(regions.len(), field.len());
    assert_eq!(weights.len(), field.len());
    let mut sums: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for ((&q, x), &w) in regions.iter().zip(field.values()).zip(weights) {
        let entry = sums.entry(q).or_default();
        if let Some(x) = x {
            entry.0 += w * x;
            entry.1 += w;
        }
    }
    sums.into_iter()
        .map(|(q, (num, den))| {
            if den > 0.0 {
                Ok((q, num / den))
            } else {
                Err(Error::invalid(format!("region {q} has zero total weight")))
            }
        })
        .collect()
}

/// Aggregates over the map's own region labels.
pub fn aggregate_field(map: &PrecinctMap, field: &PrecinctField, weights_column: &str) -> Result<BTreeMap<i64, f64>> {
    let regions = map
        .regions()
        .ok_or_else(|| Error::invalid("map has no region labels"))?;
    let weights = map
        .column(weights_column)
        .ok_or_else(|| Error::invalid(format!("no weights column \"{weights_column}\"")))?;
    aggregate_by(regions, field, weights)
}
