use serde::{Deserialize, Serialize};

use super::{mask_pipeline, BinaryMask, MaskParams, PreprocessError};
use crate::ingest::GrayImage;

/// Size and bounding box of one connected component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentMeasure {
    pub pixel_count: usize,
    /// `(min_row, min_col, max_row, max_col)`, inclusive.
    pub bbox: (usize, usize, usize, usize),
    pub height_px: usize,
    pub width_px: usize,
    pub hw_ratio: f64,
}

impl ComponentMeasure {
    fn from_parts(pixel_count: usize, bbox: (usize, usize, usize, usize)) -> Self {
        let height_px = bbox.2 - bbox.0 + 1;
        let width_px = bbox.3 - bbox.1 + 1;
        Self {
            pixel_count,
            bbox,
            height_px,
            width_px,
            hw_ratio: height_px as f64 / width_px as f64,
        }
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

/// 8-connected components by two-pass union-find labelling.
///
/// Returns one label per pixel (0 for background, `1..=n` otherwise, in
/// raster order of each component's first pixel) and the components.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<ComponentMeasure>) {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut k = 0;
            // already-visited neighbours: W, NW, N, NE
            if x > 0 && labels[y * w + x - 1] != 0 {
                neighbours[k] = labels[y * w + x - 1];
                k += 1;
            }
            if y > 0 {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let l = labels[(y - 1) * w + nx];
                    if l != 0 {
                        neighbours[k] = l;
                        k += 1;
                    }
                }
            }
            let label = if k == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let mut root = find(&mut parent, neighbours[0]);
                for &n in &neighbours[1..k] {
                    let r = find(&mut parent, n);
                    if r != root {
                        let (lo, hi) = (root.min(r), root.max(r));
                        parent[hi as usize] = lo;
                        root = lo;
                    }
                }
                root
            };
            labels[y * w + x] = label;
        }
    }
    let mut remap = vec![0u32; parent.len()];
    let mut stats: Vec<(usize, (usize, usize, usize, usize))> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let root = find(&mut parent, l) as usize;
            if remap[root] == 0 {
                stats.push((0, (y, x, y, x)));
                remap[root] = stats.len() as u32;
            }
            let id = remap[root];
            labels[y * w + x] = id;
            let (count, bb) = &mut stats[id as usize - 1];
            *count += 1;
            bb.0 = bb.0.min(y);
            bb.1 = bb.1.min(x);
            bb.2 = bb.2.max(y);
            bb.3 = bb.3.max(x);
        }
    }
    let comps = stats
        .into_iter()
        .map(|(c, bb)| ComponentMeasure::from_parts(c, bb))
        .collect();
    (labels, comps)
}

/// The component with the most pixels; ties go to the smallest
/// `(min_row, min_col)` of the bounding box.
pub fn largest_component(mask: &BinaryMask) -> Result<ComponentMeasure, PreprocessError> {
    let (_, comps) = label_components(mask);
    comps
        .into_iter()
        .min_by(|a, b| {
            b.pixel_count
                .cmp(&a.pixel_count)
                .then((a.bbox.0, a.bbox.1).cmp(&(b.bbox.0, b.bbox.1)))
        })
        .ok_or(PreprocessError::NoComponent)
}

/// Masks the image and measures its largest component.
pub fn measure_ratio(img: &GrayImage, params: &MaskParams) -> Result<ComponentMeasure, PreprocessError> {
    largest_component(&mask_pipeline(img, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        BinaryMask::new(h, w, bits).unwrap()
    }

    #[test]
    fn diagonal_touch_is_connected() {
        let m = mask_from(&["#..", ".#.", "..#"]);
        let (_, comps) = label_components(&m);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].pixel_count, 3);
    }

    #[test]
    fn u_shape_merges_labels() {
        let m = mask_from(&["#.#", "#.#", "###"]);
        let (labels, comps) = label_components(&m);
        assert_eq!(comps.len(), 1);
        assert!(labels.iter().all(|&l| l <= 1));
    }

    #[test]
    fn picks_biggest_blob() {
        let mut rows = vec!["..........".to_string(); 10];
        for r in rows.iter_mut().take(6) {
            r.replace_range(0..5, "#####");
        }
        rows[9].replace_range(5..10, "#####");
        rows[8].replace_range(5..10, "#####");
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let c = largest_component(&mask_from(&refs)).unwrap();
        assert_eq!(c.pixel_count, 30);
        assert_eq!(c.bbox, (0, 0, 5, 4));
        assert_eq!((c.height_px, c.width_px), (6, 5));
    }

    #[test]
    fn ties_go_to_upper_left() {
        let m = mask_from(&["....##", "......", "##...."]);
        assert_eq!(largest_component(&m).unwrap().bbox, (0, 4, 0, 5));
    }

    #[test]
    fn full_frame() {
        let m = BinaryMask::new(64, 64, vec![true; 4096]).unwrap();
        let c = largest_component(&m).unwrap();
        assert_eq!(c.bbox, (0, 0, 63, 63));
        assert_eq!(c.hw_ratio, 1.0);
    }

    #[test]
    fn empty_mask_has_no_component() {
        let m = BinaryMask::new(4, 4, vec![false; 16]).unwrap();
        assert!(matches!(largest_component(&m), Err(PreprocessError::NoComponent)));
    }

    #[test]
    fn solid_image_ratio_is_exact() {
        let img = GrayImage::new(100, 50, vec![1.0; 5000]).unwrap();
        let c = measure_ratio(&img, &MaskParams::default()).unwrap();
        assert_eq!(c.hw_ratio, 2.0);
    }

    #[test]
    fn framed_rectangle_ratio() {
        let mut img = GrayImage::zeros(140, 90);
        for y in 20..120 {
            for x in 20..70 {
                img.set(y, x, 1.0);
            }
        }
        let params = MaskParams::default();
        // Blur grows the silhouette by one pixel on every side, so
        // (100 + 2) / (50 + 2); the unblurred rectangle is exactly 2.0.
        let c = measure_ratio(&img, &params).unwrap();
        assert_eq!((c.height_px, c.width_px), (102, 52));
        let raw = largest_component(&super::super::binarize(&img, 0.5).unwrap()).unwrap();
        assert_eq!(raw.hw_ratio, 2.0);
    }
}
