use ndarray::Array4;
use rand::Rng;

use crate::skeleton::SkeletonSequence;

/// Unit diagonal, off-diagonals uniform in `[-amplitude, amplitude]`.
pub fn random_shear_matrix<R: Rng>(amplitude: f64, rng: &mut R) -> [[f64; 3]; 3] {
    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if i != j && amplitude > 0.0 {
                *v = rng.random_range(-amplitude..=amplitude);
            }
        }
    }
    m
}

/// Applies `matrix` to every (x, y, z) coordinate of the clip.
pub fn shear_with_matrix(seq: &SkeletonSequence, matrix: &[[f64; 3]; 3]) -> SkeletonSequence {
    let x = seq.coords();
    let (c, t, v, m) = x.dim();
    assert_eq!(c, 3, "shear needs 3-D coordinates");
    let mut out = Array4::<f32>::zeros((c, t, v, m));
    for ti in 0..t {
        for vi in 0..v {
            for mi in 0..m {
                let p = [x[[0, ti, vi, mi]] as f64, x[[1, ti, vi, mi]] as f64, x[[2, ti, vi, mi]] as f64];
                for (ci, row) in matrix.iter().enumerate() {
                    out[[ci, ti, vi, mi]] = (row[0] * p[0] + row[1] * p[1] + row[2] * p[2]) as f32;
                }
            }
        }
    }
    seq.with_coords(out)
}

pub fn shear<R: Rng>(seq: &SkeletonSequence, amplitude: f64, rng: &mut R) -> SkeletonSequence {
    let matrix = random_shear_matrix(amplitude, rng);
    shear_with_matrix(seq, &matrix)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::augment::sample_rng;
    use crate::skeleton::{synth_generate, SkeletonTopology, SynthConfig};

    #[test]
    fn zero_amplitude_is_identity() {
        let ds = synth_generate(&SynthConfig { samples_per_class: 1, ..SynthConfig::default() }, 0).unwrap();
        let seq = &ds.samples[0];
        assert_eq!(&shear(seq, 0.0, &mut sample_rng(0, 0, 0)), seq);
    }

    #[test]
    fn hand_written_matrix() {
        let m = [[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]];
        let mut x = Array4::<f32>::zeros((3, 1, 9, 1));
        x[[0, 0, 4, 0]] = 1.0;
        let seq = SkeletonSequence::new(x, Arc::new(SkeletonTopology::desk9()), None).unwrap();
        let out = shear_with_matrix(&seq, &m);
        assert_eq!(out.coords()[[0, 0, 4, 0]], 1.0);
        assert_eq!(out.coords()[[1, 0, 4, 0]], 0.5);
        assert_eq!(out.coords()[[2, 0, 4, 0]], 0.5);
    }

    #[test]
    fn random_matrix_respects_amplitude_and_shape() {
        let mut rng = sample_rng(5, 0, 0);
        for _ in 0..100 {
            let m = random_shear_matrix(0.5, &mut rng);
            for (i, row) in m.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if i == j {
                        assert_eq!(v, 1.0);
                    } else {
                        assert!(v.abs() <= 0.5);
                    }
                }
            }
        }
        let ds = synth_generate(&SynthConfig { samples_per_class: 1, ..SynthConfig::default() }, 0).unwrap();
        assert_eq!(shear(&ds.samples[0], 0.5, &mut rng).dims(), ds.samples[0].dims());
    }
}
