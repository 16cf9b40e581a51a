use serde::{Deserialize, Serialize};

use crate::volume::{CropBox, LabelMap};

/// A voxel box tagged with the class it encloses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub class: u8,
    pub bounds: CropBox,
}

/// Tight box around every voxel labelled `class`, if any.
pub fn bounding_box_of(labels: &LabelMap, class: u8) -> Option<BoundingBox> {
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for (i, _) in labels.data().iter().enumerate().filter(|(_, &v)| v == class) {
        let c = labels.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a] as i64);
            hi[a] = hi[a].max(c[a] as i64 + 1);
        }
    }
    (lo[0] != i64::MAX).then_some(BoundingBox {
        class,
        bounds: CropBox { lo, hi },
    })
}

/// Replaces every group of transitively overlapping same-class boxes with
/// their bounding union. Output is sorted by class, then corner.
pub fn merge_overlapping_boxes(boxes: &[BoundingBox]) -> Vec<BoundingBox> {
    let mut out: Vec<BoundingBox> = Vec::new();
    let mut classes: Vec<u8> = boxes.iter().map(|b| b.class).collect();
    classes.sort_unstable();
    classes.dedup();
    for class in classes {
        let mut group: Vec<CropBox> = boxes
            .iter()
            .filter(|b| b.class == class)
            .map(|b| b.bounds)
            .collect();
        // A union can grow into boxes it did not touch before, so repeat
        // until no pair overlaps.
        'restart: loop {
            for i in 0..group.len() {
                for j in i + 1..group.len() {
                    if group[i].intersects(&group[j]) {
                        let merged = group[i].union(&group[j]);
                        group.swap_remove(j);
                        group[i] = merged;
                        continue 'restart;
                    }
                }
            }
            break;
        }
        group.sort_by_key(|b| (b.lo, b.hi));
        out.extend(group.into_iter().map(|bounds| BoundingBox { class, bounds }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(class: u8, lo: [i64; 3], hi: [i64; 3]) -> BoundingBox {
        BoundingBox { class, bounds: CropBox::new(lo, hi).unwrap() }
    }

    #[test]
    fn single_and_disjoint() {
        let a = bx(1, [0; 3], [2; 3]);
        assert_eq!(merge_overlapping_boxes(&[a]), vec![a]);
        let b = bx(1, [2, 0, 0], [4, 2, 2]);
        assert_eq!(merge_overlapping_boxes(&[b, a]), vec![a, b]);
        assert!(merge_overlapping_boxes(&[]).is_empty());
    }

    #[test]
    fn chain_merges_transitively() {
        let a = bx(1, [0; 3], [3; 3]);
        let b = bx(1, [2; 3], [5; 3]);
        let c = bx(1, [4; 3], [7; 3]);
        assert!(!a.bounds.intersects(&c.bounds));
        assert_eq!(merge_overlapping_boxes(&[a, c, b]), vec![bx(1, [0; 3], [7; 3])]);
    }

    #[test]
    fn union_swallowing_a_third_box() {
        // a and b overlap; their union reaches c, which touched neither.
        let a = bx(2, [0, 0, 0], [3, 1, 1]);
        let b = bx(2, [2, 0, 0], [3, 5, 1]);
        let c = bx(2, [0, 3, 0], [1, 4, 1]);
        assert_eq!(merge_overlapping_boxes(&[a, b, c]), vec![bx(2, [0; 3], [3, 5, 1])]);
    }

    #[test]
    fn classes_do_not_mix() {
        let a = bx(1, [0; 3], [3; 3]);
        let b = bx(2, [1; 3], [4; 3]);
        assert_eq!(merge_overlapping_boxes(&[b, a]), vec![a, b]);
    }

    #[test]
    fn tight_box() {
        let mut l = LabelMap::filled([6, 5, 4], [1.0; 3], 0).unwrap();
        assert!(bounding_box_of(&l, 3).is_none());
        l.set(1, 2, 3, 3).unwrap();
        l.set(4, 0, 1, 3).unwrap();
        assert_eq!(bounding_box_of(&l, 3), Some(bx(3, [1, 0, 1], [5, 3, 4])));
    }
}
