use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::models::{Classifier, Forward};
use crate::tensor::Real;

/// Feature space in which distances are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceLayer {
    Input,
    /// After the spatial transformer.
    Transform,
    /// After EdgeConv stage `l` (1-based).
    EdgeConv(usize),
}

impl FromStr for DistanceLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Self::Input),
            "transform" => Ok(Self::Transform),
            _ => s
                .strip_prefix("edgeconv")
                .and_then(|l| l.parse().ok())
                .map(Self::EdgeConv)
                .ok_or_else(|| {
                    Error::param(format!("unknown layer `{s}`; use input, transform or edgeconvN"))
                }),
        }
    }
}

/// Euclidean distances from point `source` to every point in the feature
/// space of `layer`, with the model in evaluation mode.
pub fn feature_distances(
    model: &Classifier,
    cloud: &FeatureMatrix,
    source: usize,
    layer: DistanceLayer,
) -> Result<Vec<Real>> {
    if source >= cloud.n() {
        return Err(Error::param(format!("source index {source} out of range for {} points", cloud.n())));
    }
    let features = match layer {
        DistanceLayer::Input => cloud.clone(),
        _ => {
            let mut fwd = Forward::eval(&model.store);
            let out = model.forward(&mut fwd, &[cloud])?;
            let var = match layer {
                DistanceLayer::Transform if model.has_transform() => out.stage_input,
                DistanceLayer::Transform => return Err(Error::param("the model has no spatial transformer")),
                DistanceLayer::EdgeConv(l) if (1..=out.stage_features.len()).contains(&l) => {
                    out.stage_features[l - 1]
                }
                DistanceLayer::EdgeConv(l) => {
                    return Err(Error::param(format!(
                        "stage {l} does not exist; the model has {}",
                        out.stage_features.len()
                    )))
                }
                DistanceLayer::Input => unreachable!(),
            };
            FeatureMatrix::from_tensor(fwd.tape.value(var))?
        }
    };
    let s = features.row(source).to_vec();
    Ok((0..features.n())
        .map(|i| {
            features.row(i).iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum::<Real>().sqrt()
        })
        .collect())
}

/// CSV with header `index,x,y,z,distance`, coordinates taken from the input.
pub fn export_feature_distances(
    model: &Classifier,
    cloud: &FeatureMatrix,
    source: usize,
    layer: DistanceLayer,
) -> Result<String> {
    if cloud.f() < 3 {
        return Err(Error::dim("export needs three coordinate channels"));
    }
    let d = feature_distances(model, cloud, source, layer)?;
    let mut out = String::from("index,x,y,z,distance\n");
    for (i, dist) in d.iter().enumerate() {
        let p = cloud.row(i);
        writeln!(out, "{i},{},{},{},{dist}", p[0], p[1], p[2]).expect("writing to a String");
    }
    Ok(out)
}
