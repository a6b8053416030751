use super::{LabelVolume, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    /// Face neighbours only.
    #[serde(rename = "6")]
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            6 => Some(Connectivity::Six),
            26 => Some(Connectivity::TwentySix),
            _ => None,
        }
    }

    fn offsets(self) -> Vec<[isize; 3]> {
        let mut v = Vec::new();
        for k in -1isize..=1 {
            for j in -1isize..=1 {
                for i in -1isize..=1 {
                    let manhattan = i.abs() + j.abs() + k.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        v.push([i, j, k]);
                    }
                }
            }
        }
        v
    }
}

/// Labels maximal connected foreground regions 1, 2, ... in the order their
/// first voxel is met in scan order. Background is 0.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> (LabelVolume, usize) {
    let g = mask.geometry();
    let src = mask.data();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; g.len()];
    let mut next = 0u32;
    let mut queue = std::collections::VecDeque::new();
    for seed in 0..g.len() {
        if !src[seed] || labels[seed] != 0 {
            continue;
        }
        next += 1;
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(idx) = queue.pop_front() {
            let [i, j, k] = g.ijk(idx);
            for o in &offsets {
                let (x, y, z) = (i as isize + o[0], j as isize + o[1], k as isize + o[2]);
                if !g.contains_index(x, y, z) {
                    continue;
                }
                let n = g.index(x as usize, y as usize, z as usize);
                if src[n] && labels[n] == 0 {
                    labels[n] = next;
                    queue.push_back(n);
                }
            }
        }
    }
    // more than u16::MAX components saturates; only sizes are used downstream
    let data = labels.iter().map(|&l| l.min(u16::MAX as u32) as u16).collect();
    (
        LabelVolume::new(g.clone(), data).expect("same geometry"),
        next as usize,
    )
}

/// The component with the most voxels; ties go to the component containing
/// the smallest linear index. Empty input gives an empty mask.
pub fn largest_component(mask: &Mask, connectivity: Connectivity) -> Mask {
    let g = mask.geometry();
    let src = mask.data();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; g.len()];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for seed in 0..g.len() {
        if !src[seed] || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0;
        labels[seed] = label;
        stack.push(seed);
        while let Some(idx) = stack.pop() {
            size += 1;
            let [i, j, k] = g.ijk(idx);
            for o in &offsets {
                let (x, y, z) = (i as isize + o[0], j as isize + o[1], k as isize + o[2]);
                if g.contains_index(x, y, z) {
                    let n = g.index(x as usize, y as usize, z as usize);
                    if src[n] && labels[n] == 0 {
                        labels[n] = label;
                        stack.push(n);
                    }
                }
            }
        }
        sizes.push(size);
    }
    // labels increase with their smallest index, so the first maximum wins ties
    let best = (1..sizes.len()).fold(0usize, |b, l| if sizes[l] > sizes[b] { l } else { b });
    let data = labels.iter().map(|&l| best != 0 && l as usize == best).collect();
    Mask::new(g.clone(), data).expect("same geometry")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn grid(n: usize) -> Geometry {
        Geometry::new([n; 3], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn set(m: &mut Mask, v: &[[usize; 3]]) {
        for p in v {
            let idx = m.geometry().index(p[0], p[1], p[2]);
            m.data_mut()[idx] = true;
        }
    }

    #[test]
    fn two_blocks() {
        let g = grid(8);
        let m = Mask::from_world_fn(g, |p| {
            let a = p.iter().all(|&c| (0.0..2.0).contains(&c));
            let b = p.iter().all(|&c| (4.0..6.0).contains(&c));
            a || b
        });
        let (lab, n) = connected_components(&m, Connectivity::Six);
        assert_eq!(n, 2);
        assert_eq!(lab.data()[0], 1);
    }

    #[test]
    fn diagonal_depends_on_connectivity() {
        let mut m = Mask::empty(grid(4));
        set(&mut m, &[[1, 1, 1], [2, 2, 2]]);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).1, 1);
        assert_eq!(connected_components(&m, Connectivity::Six).1, 2);
    }

    #[test]
    fn largest_and_ties() {
        let g = grid(12);
        let mut m = Mask::empty(g.clone());
        let big: Vec<[usize; 3]> = (0..10).map(|i| [i, 8, 8]).collect();
        set(&mut m, &big);
        set(&mut m, &[[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        let l = largest_component(&m, Connectivity::Six);
        assert_eq!(l.count(), 10);
        assert!(l.get(5, 8, 8));

        assert!(largest_component(&Mask::empty(g.clone()), Connectivity::Six).is_empty());

        let mut t = Mask::empty(g);
        set(&mut t, &[[5, 5, 5], [6, 5, 5]]);
        set(&mut t, &[[0, 1, 0], [1, 1, 0]]);
        let l = largest_component(&t, Connectivity::Six);
        assert!(l.get(0, 1, 0) && !l.get(5, 5, 5));
    }
}
