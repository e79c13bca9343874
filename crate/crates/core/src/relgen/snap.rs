use serde::{Deserialize, Serialize};

use super::count::{count_layout, distinct_layout, group_layout};
use super::freqs::{chain4_layout, heavy_layout};
use super::star::pk_fk_layout;
use super::{Adjustment, GenError};
use crate::mathcore::{BoundParams, QueryKind};

const TOLERANCE: f64 = 1e-9;

/// Candidates tried on each side of the requested B before giving up.
pub const SNAP_RADIUS: u64 = 64;

/// `x` as a positive integer if it is one up to a relative 1e-9.
pub fn integral(x: f64) -> Option<u64> {
    if !x.is_finite() || x < 1.0 - TOLERANCE {
        return None;
    }
    let r = x.round();
    ((x - r).abs() <= TOLERANCE * r.max(1.0)).then_some(r as u64)
}

/// Collects every non-integral construction quantity before failing.
#[derive(Debug, Default)]
pub(crate) struct Fractional(Vec<(String, f64)>);

impl Fractional {
    pub fn whole(&mut self, name: &str, x: f64) -> Option<u64> {
        let r = integral(x);
        if r.is_none() {
            self.0.push((name.to_string(), x));
        }
        r
    }

    pub fn finish(self) -> Result<(), GenError> {
        if self.0.is_empty() {
            return Ok(());
        }
        let names: Vec<String> = self.0.iter().map(|(n, v)| format!("{n} = {v}")).collect();
        Err(GenError::Snap {
            message: names.join(", "),
            fractional: self.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapped {
    pub params: BoundParams,
    pub adjustments: Vec<Adjustment>,
}

/// Checks that every construction quantity of `params` is a positive
/// integer under the default design.
pub(crate) fn feasible(params: &BoundParams) -> Result<(), GenError> {
    match params.query_kind {
        QueryKind::Count2 | QueryKind::CountP | QueryKind::Sum => {
            let layout = count_layout(params)?;
            layout.pick_k(None, params.gap()).map(|_| ())
        }
        QueryKind::CountDistinct => {
            let (_, region, k_max) = distinct_layout(params)?;
            super::largest_divisor(region, k_max, |_| true)
                .map(|_| ())
                .ok_or_else(|| GenError::Precondition(format!("k = {k_max} < 1")))
        }
        QueryKind::GroupBy => group_layout(params).map(|_| ()),
        QueryKind::PkFkCount | QueryKind::PkFkGroupBy => pk_fk_layout(params).map(|_| ()),
        QueryKind::HeavyHitter => heavy_layout(params).map(|_| ()),
        QueryKind::Chain4 => chain4_layout(params).map(|_| ()),
    }
}

/// Nearest parameters whose construction is integral.
///
/// Moves λ to the closest divisor of the design table for GROUP_BY and B
/// to the closest feasible value otherwise (multiples of M for SUM); ties
/// go to the smaller value. Parameters outside the bound's validity region
/// are rejected, not moved into it.
pub fn snap_params(params: &BoundParams) -> Result<Snapped, GenError> {
    params.validate()?;
    let original = match feasible(params) {
        Ok(()) => {
            return Ok(Snapped {
                params: params.clone(),
                adjustments: Vec::new(),
            })
        }
        Err(e @ GenError::Math(_)) => return Err(e),
        Err(e) => e,
    };

    if params.query_kind == QueryKind::GroupBy {
        let n = *params.table_sizes.iter().max().unwrap();
        let lambda = params.lambda.unwrap_or(1.0);
        let mut divisors: Vec<u64> = (1..=n).filter(|d| n.is_multiple_of(*d)).collect();
        divisors.sort_by(|a, b| {
            let da = (*a as f64 - lambda).abs();
            let db = (*b as f64 - lambda).abs();
            da.total_cmp(&db).then(a.cmp(b))
        });
        for d in divisors {
            let cand = params.clone().with_lambda(d as f64);
            if cand.validate().is_ok() && feasible(&cand).is_ok() {
                return Ok(Snapped {
                    params: cand,
                    adjustments: vec![Adjustment {
                        quantity: "lambda".into(),
                        from: lambda,
                        to: d as f64,
                    }],
                });
            }
        }
        return Err(original);
    }

    let unit = match params.query_kind {
        QueryKind::Sum => {
            let mut frac = Fractional::default();
            frac.whole("M", params.sum_max.unwrap_or(0.0));
            frac.finish()?;
            params.sum_max.unwrap_or(1.0)
        }
        _ => 1.0,
    };
    let centre = params.b / unit;
    let lo = (centre.floor() as u64).saturating_sub(SNAP_RADIUS).max(1);
    let hi = centre.ceil() as u64 + SNAP_RADIUS;
    let mut candidates: Vec<u64> = (lo..=hi).collect();
    candidates.sort_by(|a, b| {
        let da = (*a as f64 - centre).abs();
        let db = (*b as f64 - centre).abs();
        da.total_cmp(&db).then(a.cmp(b))
    });
    for j in candidates {
        let mut cand = params.clone();
        cand.b = j as f64 * unit;
        if cand.validate().is_ok() && feasible(&cand).is_ok() {
            return Ok(Snapped {
                params: cand,
                adjustments: vec![Adjustment {
                    quantity: "B".into(),
                    from: params.b,
                    to: j as f64 * unit,
                }],
            });
        }
    }
    Err(original)
}
