use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledCloud;
use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::tensor::Real;

/// The six directions a partial scan can be cut from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `+z`
    Top,
    /// `-z`
    Bottom,
    /// `+x`
    Right,
    /// `-x`
    Left,
    /// `+y`
    Front,
    /// `-y`
    Back,
}

impl Side {
    pub const ALL: [Side; 6] = [Side::Top, Side::Bottom, Side::Right, Side::Left, Side::Front, Side::Back];

    fn axis_sign(self) -> (usize, Real) {
        match self {
            Side::Top => (2, 1.0),
            Side::Bottom => (2, -1.0),
            Side::Right => (0, 1.0),
            Side::Left => (0, -1.0),
            Side::Front => (1, 1.0),
            Side::Back => (1, -1.0),
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "top" => Side::Top,
            "bottom" => Side::Bottom,
            "right" => Side::Right,
            "left" => Side::Left,
            "front" => Side::Front,
            "back" => Side::Back,
            _ => return Err(Error::param(format!("unknown side `{s}`"))),
        })
    }
}

fn survivors(n: usize, fraction: Real) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("keep fraction {fraction} is outside (0, 1]")));
    }
    let m = (fraction * n as Real).round() as usize;
    if m == 0 {
        return Err(Error::param(format!("keeping {fraction} of {n} points leaves none")));
    }
    Ok(m)
}

/// Cuts away the points nearest `side`, keeping `round(fraction·n)` points
/// in their original order. Deterministic: ties go to the lower index.
pub fn side_drop(points: &FeatureMatrix, fraction: Real, side: Side) -> Result<FeatureMatrix> {
    points.select_rows(&side_drop_indices(points, fraction, side)?)
}

/// Rows kept by [`side_drop`], in increasing order.
pub fn side_drop_indices(points: &FeatureMatrix, fraction: Real, side: Side) -> Result<Vec<usize>> {
    if points.f() < 3 {
        return Err(Error::dim("side drop needs three coordinates"));
    }
    let m = survivors(points.n(), fraction)?;
    let (axis, sign) = side.axis_sign();
    let mut order: Vec<usize> = (0..points.n()).collect();
    order.sort_by(|&a, &b| (sign * points.row(a)[axis]).total_cmp(&(sign * points.row(b)[axis])).then(a.cmp(&b)));
    let mut keep = order[..m].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

pub fn random_subsample<R: Rng + ?Sized>(points: &FeatureMatrix, fraction: Real, rng: &mut R) -> Result<FeatureMatrix> {
    let keep = random_subsample_indices(points.n(), fraction, rng)?;
    if keep.len() == points.n() {
        return Ok(points.clone());
    }
    points.select_rows(&keep)
}

/// Uniformly drawn rows kept by [`random_subsample`], in increasing order.
pub fn random_subsample_indices<R: Rng + ?Sized>(n: usize, fraction: Real, rng: &mut R) -> Result<Vec<usize>> {
    let m = survivors(n, fraction)?;
    if m == n {
        return Ok((0..n).collect());
    }
    let mut keep = index::sample(rng, n, m).into_vec();
    keep.sort_unstable();
    Ok(keep)
}

/// The cloud restricted to rows `keep`, point labels included.
pub fn subset_cloud(cloud: &LabeledCloud, keep: &[usize]) -> Result<LabeledCloud> {
    Ok(LabeledCloud {
        points: cloud.points.select_rows(keep)?,
        class_label: cloud.class_label,
        point_labels: cloud.point_labels.as_ref().map(|l| keep.iter().map(|&i| l[i]).collect()),
        category: cloud.category,
    })
}
