use super::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Dilate,
    Erode,
    Close,
    Open,
}

/// Binary morphology with a discrete ball of radius `radius_vox`.
///
/// Dilation ignores taps outside the grid; erosion treats them as foreground,
/// which keeps the pair adjoint so closing is extensive and idempotent even
/// for masks touching the border.
pub fn morphology(mask: &Mask, op: MorphOp, radius_vox: usize) -> Mask {
    let radius = radius_vox.max(1);
    let ball = ball_offsets(radius);
    match op {
        MorphOp::Dilate => dilate(mask, &ball),
        MorphOp::Erode => erode(mask, &ball),
        MorphOp::Close => erode(&dilate(mask, &ball), &ball),
        MorphOp::Open => dilate(&erode(mask, &ball), &ball),
    }
}

fn ball_offsets(r: usize) -> Vec<[isize; 3]> {
    let r = r as isize;
    let mut v = Vec::new();
    for k in -r..=r {
        for j in -r..=r {
            for i in -r..=r {
                if i * i + j * j + k * k <= r * r {
                    v.push([i, j, k]);
                }
            }
        }
    }
    v
}

fn dilate(mask: &Mask, ball: &[[isize; 3]]) -> Mask {
    let g = mask.geometry();
    let [nx, ny, nz] = g.dims();
    let src = mask.data();
    let mut out = Mask::empty(g.clone());
    let dst = out.data_mut();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if !src[g.index(i, j, k)] {
                    continue;
                }
                for o in ball {
                    let (x, y, z) = (i as isize + o[0], j as isize + o[1], k as isize + o[2]);
                    if g.contains_index(x, y, z) {
                        dst[g.index(x as usize, y as usize, z as usize)] = true;
                    }
                }
            }
        }
    }
    out
}

fn erode(mask: &Mask, ball: &[[isize; 3]]) -> Mask {
    let g = mask.geometry();
    let [nx, ny, nz] = g.dims();
    let src = mask.data();
    let mut out = Mask::empty(g.clone());
    let dst = out.data_mut();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = g.index(i, j, k);
                if !src[idx] {
                    continue;
                }
                dst[idx] = ball.iter().all(|o| {
                    let (x, y, z) = (i as isize + o[0], j as isize + o[1], k as isize + o[2]);
                    !g.contains_index(x, y, z) || src[g.index(x as usize, y as usize, z as usize)]
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use proptest::prelude::*;

    fn grid(n: usize) -> Geometry {
        Geometry::new([n; 3], [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn isolated_voxel_erodes_away() {
        let mut m = Mask::empty(grid(7));
        let idx = m.geometry().index(3, 3, 3);
        m.data_mut()[idx] = true;
        assert!(morphology(&m, MorphOp::Erode, 1).is_empty());
        assert_eq!(morphology(&m, MorphOp::Dilate, 1).count(), 7);
    }

    #[test]
    fn closing_a_ball_keeps_it() {
        let m = Mask::from_world_fn(grid(21), |p| {
            let d = [p[0] - 10.0, p[1] - 10.0, p[2] - 10.0];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= 36.0
        });
        assert_eq!(morphology(&m, MorphOp::Close, 2), m);
    }

    fn random_mask(bits: Vec<bool>) -> Mask {
        Mask::new(grid(8), bits).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn closing_extensive_opening_antiextensive_idempotent(
            bits in proptest::collection::vec(proptest::bool::weighted(0.4), 512),
            r in 1usize..3,
        ) {
            let m = random_mask(bits);
            let c = morphology(&m, MorphOp::Close, r);
            let o = morphology(&m, MorphOp::Open, r);
            prop_assert!(m.is_subset_of(&c));
            prop_assert!(o.is_subset_of(&m));
            prop_assert_eq!(morphology(&c, MorphOp::Close, r), c);
            prop_assert_eq!(morphology(&o, MorphOp::Open, r), o);
        }
    }
}
