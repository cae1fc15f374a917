use micseg_core::{Real, Tensor};

use crate::error::{DataError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Ct,
    Mri,
    Other,
}

/// Scalar intensity grid. Extents are (D, H, W) with x fastest in memory, so
/// flat index = (z * H + y) * W + x; spacing is millimetres per axis in the
/// same (z, y, x) order as the extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    spacing: [f32; 3],
    pub modality: Modality,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        extents: [usize; 3],
        spacing: [f32; 3],
        modality: Modality,
        data: Vec<f32>,
    ) -> Result<Self> {
        check_extents(extents, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite(i));
        }
        Ok(Self {
            extents,
            spacing,
            modality,
            data,
        })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    /// Copy into a tensor of shape [D, H, W]; the memory orders agree.
    pub fn to_tensor<P: Real>(&self) -> Tensor<P> {
        let data = self.data.iter().map(|&v| P::from_f64(v as f64)).collect();
        Tensor::from_vec(&self.extents, data).expect("volume extents match payload")
    }
}

/// Per-voxel class indices; 0 is background. Same layout and spacing
/// conventions as [`Volume`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    extents: [usize; 3],
    spacing: [f32; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(extents: [usize; 3], spacing: [f32; 3], data: Vec<u8>) -> Result<Self> {
        check_extents(extents, data.len())?;
        Ok(Self {
            extents,
            spacing,
            data,
        })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn indices(&self) -> &[u8] {
        &self.data
    }

    pub fn max_class(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        for (voxel, &c) in self.data.iter().enumerate() {
            if usize::from(c) >= classes {
                return Err(DataError::ClassRange {
                    found: c,
                    voxel,
                    classes,
                });
            }
        }
        Ok(())
    }

    /// One-hot tensor [D, H, W, classes].
    pub fn to_one_hot<P: Real>(&self, classes: usize) -> Result<Tensor<P>> {
        self.check_classes(classes)?;
        let [d, h, w] = self.extents;
        let mut data = vec![P::ZERO; self.data.len() * classes];
        for (i, &c) in self.data.iter().enumerate() {
            data[i * classes + usize::from(c)] = P::ONE;
        }
        Ok(Tensor::from_vec(&[d, h, w, classes], data).expect("extents match payload"))
    }
}

/// One aligned training example: both modality volumes plus the labels,
/// which live in the first volume's geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct CasePair {
    pub id: String,
    pub ct: Volume,
    pub mri: Volume,
    pub labels: LabelMap,
}

impl CasePair {
    pub fn new(id: impl Into<String>, ct: Volume, mri: Volume, labels: LabelMap) -> Result<Self> {
        if ct.extents() != mri.extents() {
            return Err(DataError::ExtentMismatch(ct.extents(), mri.extents()));
        }
        if ct.extents() != labels.extents() {
            return Err(DataError::ExtentMismatch(ct.extents(), labels.extents()));
        }
        Ok(Self {
            id: id.into(),
            ct,
            mri,
            labels,
        })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.ct.extents()
    }
}

fn check_extents(extents: [usize; 3], payload: usize) -> Result<()> {
    if extents.iter().any(|&e| e == 0) {
        return Err(DataError::EmptyExtent(extents));
    }
    let expected = extents
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or(DataError::ExtentOverflow)?;
    if expected != payload {
        return Err(DataError::PayloadLength {
            extents,
            expected,
            actual: payload,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_rejects_non_finite() {
        let err = Volume::new(
            [1, 1, 2],
            [1.0; 3],
            Modality::Ct,
            vec![0.0, f32::NAN],
        )
        .unwrap_err();
        assert!(matches!(err, DataError::NonFinite(1)));
    }

    #[test]
    fn volume_rejects_wrong_payload_length() {
        let err = Volume::new([2, 2, 2], [1.0; 3], Modality::Ct, vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, DataError::PayloadLength { expected: 8, .. }));
    }

    #[test]
    fn label_class_check() {
        let l = LabelMap::new([1, 1, 3], [1.0; 3], vec![0, 2, 1]).unwrap();
        l.check_classes(3).unwrap();
        assert!(matches!(
            l.check_classes(2).unwrap_err(),
            DataError::ClassRange {
                found: 2,
                voxel: 1,
                ..
            }
        ));
    }

    #[test]
    fn one_hot_marks_each_voxel_once() {
        let l = LabelMap::new([1, 2, 2], [1.0; 3], vec![0, 1, 2, 1]).unwrap();
        let t = l.to_one_hot::<f64>(3).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2, 3]);
        assert_eq!(t.data().iter().sum::<f64>(), 4.0);
        assert_eq!(t.data()[2 * 3 + 2], 1.0);
        assert_eq!(t.data()[3 * 3 + 1], 1.0);
        assert_eq!(t.data()[3 * 3 + 2], 0.0);
    }

    #[test]
    fn case_pair_requires_shared_extents() {
        let v = |e| Volume::new(e, [1.0; 3], Modality::Ct, vec![0.0; 8]).unwrap();
        let l = LabelMap::new([2, 2, 2], [1.0; 3], vec![0; 8]).unwrap();
        CasePair::new("a", v([2, 2, 2]), v([2, 2, 2]), l.clone()).unwrap();
        let l4 = LabelMap::new([1, 2, 4], [1.0; 3], vec![0; 8]).unwrap();
        assert!(CasePair::new("b", v([2, 2, 2]), v([2, 2, 2]), l4).is_err());
    }

    #[test]
    fn tensor_copy_preserves_layout() {
        let v = Volume::new(
            [1, 2, 3],
            [1.0; 3],
            Modality::Other,
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        )
        .unwrap();
        let t = v.to_tensor::<f64>();
        assert_eq!(t.shape(), &[1, 2, 3]);
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}
