//! Training losses: focal loss on segmentation logits and smooth-L1 on
//! offsets (the metrics module's scalar-on-L1-norm convention).

use plc_autodiff::{Graph, Scalar, Tensor, Var};

use crate::error::{PlcError, Result};
use crate::lane::OffsetField;
use crate::metrics::smooth_l1;

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// Labels as booleans; anything other than 0 or 1 is rejected.
pub fn binary_labels(label: &[u8]) -> Result<Vec<bool>> {
    label
        .iter()
        .map(|&v| match v {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(PlcError::invalid(format!("label value {other} is not 0 or 1"))),
        })
        .collect()
}

/// Mean focal loss over pixels, on a graph.
pub fn focal_loss<T: Scalar>(g: &mut Graph<T>, seg_logits: Var, label: &[bool]) -> Result<Var> {
    Ok(g.focal_loss(seg_logits, label, FOCAL_ALPHA, FOCAL_GAMMA)?)
}

/// Focal loss of plain logits against a 0/1 label map.
pub fn focal_loss_value(logits: &[f64], label: &[u8]) -> Result<f64> {
    let label = binary_labels(label)?;
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::new(vec![logits.len()], logits.to_vec())?);
    let loss = focal_loss(&mut g, z, &label)?;
    Ok(g.value(loss).data()[0])
}

/// Smooth-L1 of one lane's predicted `[2, M]` offsets against its target,
/// averaged over points, on a graph.
pub fn lane_offset_loss<T: Scalar>(g: &mut Graph<T>, predicted: Var, target: &OffsetField) -> Result<Var> {
    let rows: Vec<f64> = target.to_rows();
    let t = Tensor::from_f64(vec![2, target.len()], &rows)?;
    Ok(g.smooth_l1(predicted, &t)?)
}

/// Mean smooth-L1 over every point of every lane.
pub fn offset_loss(predicted: &[OffsetField], target: &[OffsetField]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(PlcError::invalid(format!(
            "{} predicted lanes vs {} targets",
            predicted.len(),
            target.len()
        )));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (p, t) in predicted.iter().zip(target) {
        if p.len() != t.len() {
            return Err(PlcError::invalid(format!("{} predicted points vs {} targets", p.len(), t.len())));
        }
        for (a, b) in p.offsets.iter().zip(&t.offsets) {
            total += smooth_l1([a[0] - b[0], a[1] - b[1]]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(PlcError::invalid("offset loss over zero points"));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(points: &[[f64; 2]]) -> OffsetField {
        OffsetField {
            offsets: points.to_vec(),
        }
    }

    #[test]
    fn focal_examples() {
        let v = focal_loss_value(&[0.0], &[0]).unwrap();
        assert!((v - 0.75 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((v - 0.1300).abs() < 5e-5);
        let v = focal_loss_value(&[20.0, -20.0, 20.0], &[1, 0, 1]).unwrap();
        assert!(v < 1e-6);
        assert!(focal_loss_value(&[0.0], &[2]).is_err());
    }

    #[test]
    fn offset_examples() {
        let a = field(&[[1.0, 2.0], [-0.5, 0.25]]);
        assert_eq!(offset_loss(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        assert_eq!(offset_loss(&[field(&[[0.5, 0.0]])], &[field(&[[0.0, 0.0]])]).unwrap(), 0.125);
        assert_eq!(offset_loss(&[field(&[[3.0, 4.0]])], &[field(&[[0.0, 0.0]])]).unwrap(), 6.5);
        assert!(offset_loss(&[a.clone()], &[]).is_err());
        assert!(offset_loss(&[a], &[field(&[[0.0, 0.0]])]).is_err());
    }

    #[test]
    fn graph_offset_loss_matches_host() {
        let target = field(&[[0.5, 0.0], [3.0, 4.0]]);
        let mut g = Graph::<f64>::new();
        let pred = g.constant(Tensor::zeros(vec![2, 2]));
        let loss = lane_offset_loss(&mut g, pred, &target).unwrap();
        let host = offset_loss(&[OffsetField::zeros(2)], &[target]).unwrap();
        assert!((g.value(loss).data()[0] - host).abs() < 1e-12);
    }
}
