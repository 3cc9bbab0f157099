//! Motion estimation and the dynamicity score: mean per-pixel L1
//! displacement over a segment's frame pairs, batch-normalized to [0, 1].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::ingest::SegmentId;
use crate::pseudo_scoring::min_max_normalize;

/// Bins of the per-pixel displacement histogram in the motion descriptor.
pub const MOTION_BINS: usize = 32;
/// Width in pixels of one displacement bin; the last bin absorbs overflow.
pub const MOTION_BIN_WIDTH: f64 = 0.5;
pub const MOTION_DIM: usize = MOTION_BINS + 2;

/// Dense displacement field, row-major, `height * width` entries per plane.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = width * height;
        for plane in [&u, &v] {
            if plane.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: plane.len(),
                });
            }
            if let Some(i) = plane.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(FlowField { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        FlowField {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn displacements(&self) -> impl Iterator<Item = f64> + '_ {
        self.u.iter().zip(&self.v).map(|(u, v)| u.abs() + v.abs())
    }
}

/// Exhaustive block matching from `frame_a` to `frame_b`.
///
/// Blocks tile the frame from the top-left corner; edge blocks are clipped.
/// For each block the displacement in `[-search, search]^2` minimizing the
/// sum of absolute differences wins, considering only displacements that
/// keep the block inside the frame. Ties prefer smaller `|dx| + |dy|`, then
/// smaller `dy`, then smaller `dx`.
pub fn estimate_flow(
    frame_a: &[u8],
    frame_b: &[u8],
    width: usize,
    height: usize,
    block: usize,
    search: usize,
) -> Result<FlowField> {
    let n = width * height;
    if frame_a.len() != n || frame_b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if frame_a.len() != n { frame_a.len() } else { frame_b.len() },
        });
    }
    if block == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    if width < block || height < block {
        return Err(Error::InvalidArgument(format!(
            "frame {width}x{height} smaller than block {block}"
        )));
    }

    let mut candidates: Vec<(isize, isize)> = Vec::new();
    let s = search as isize;
    for dy in -s..=s {
        for dx in -s..=s {
            candidates.push((dx, dy));
        }
    }
    candidates.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));

    let mut flow = FlowField::zeros(width, height);
    for by in (0..height).step_by(block) {
        for bx in (0..width).step_by(block) {
            let bw = block.min(width - bx);
            let bh = block.min(height - by);
            let mut best = (u64::MAX, 0isize, 0isize);
            for &(dx, dy) in &candidates {
                let x0 = bx as isize + dx;
                let y0 = by as isize + dy;
                if x0 < 0 || y0 < 0 || x0 as usize + bw > width || y0 as usize + bh > height {
                    continue;
                }
                let mut sad = 0u64;
                for r in 0..bh {
                    let ra = (by + r) * width + bx;
                    let rb = (y0 as usize + r) * width + x0 as usize;
                    sad += frame_a[ra..ra + bw]
                        .iter()
                        .zip(&frame_b[rb..rb + bw])
                        .map(|(&a, &b)| a.abs_diff(b) as u64)
                        .sum::<u64>();
                    if sad >= best.0 {
                        break;
                    }
                }
                if sad < best.0 {
                    best = (sad, dx, dy);
                }
            }
            for r in 0..bh {
                for c in 0..bw {
                    let k = (by + r) * width + bx + c;
                    flow.u[k] = best.1 as f64;
                    flow.v[k] = best.2 as f64;
                }
            }
        }
    }
    Ok(flow)
}

/// Flow fields for every consecutive frame pair, computed in parallel.
pub fn segment_flows(frames: &[Vec<u8>], width: usize, height: usize, block: usize, search: usize) -> Result<Vec<FlowField>> {
    if frames.len() < 2 {
        return Err(Error::NotEnoughSamples {
            needed: 2,
            got: frames.len(),
        });
    }
    frames
        .par_windows(2)
        .map(|p| estimate_flow(&p[0], &p[1], width, height, block, search))
        .collect()
}

/// `|u_k| + |v_k|` at pixel `k`.
pub fn pixel_displacement(flow: &FlowField, k: usize) -> Result<f64> {
    if k >= flow.len() {
        return Err(Error::InvalidArgument(format!(
            "pixel {k} outside field of {} pixels",
            flow.len()
        )));
    }
    Ok(flow.u[k].abs() + flow.v[k].abs())
}

/// Mean L1 displacement over all pixels of one field.
pub fn frame_dynamicity(flow: &FlowField) -> Result<f64> {
    if flow.is_empty() {
        return Err(Error::Empty("flow field"));
    }
    Ok(flow.displacements().sum::<f64>() / flow.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicityScore {
    pub per_frame: Vec<f64>,
    pub segment_value: f64,
    /// Batch-normalized value; `None` until [`normalize_dynamicity`] runs.
    pub normalized: Option<f64>,
}

pub fn segment_dynamicity(flows: &[FlowField]) -> Result<DynamicityScore> {
    if flows.is_empty() {
        return Err(Error::Empty("segment has no flow fields"));
    }
    let per_frame = flows.iter().map(frame_dynamicity).collect::<Result<Vec<_>>>()?;
    let segment_value = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(DynamicityScore {
        per_frame,
        segment_value,
        normalized: None,
    })
}

/// Min-max normalization over the batch; a constant batch maps to 0.5.
pub fn normalize_dynamicity(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("dynamicity batch"));
    }
    min_max_normalize(values)
}

/// Motion descriptor of a segment: normalized histogram of per-pixel
/// displacement over all fields (bins of [`MOTION_BIN_WIDTH`] pixels), then
/// the mean and max displacement.
pub fn motion_features(segment_id: SegmentId, flows: &[FlowField]) -> Result<FeatureVector> {
    if flows.is_empty() {
        return Err(Error::Empty("segment has no flow fields"));
    }
    let mut values = vec![0.0; MOTION_DIM];
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for f in flows {
        for s in f.displacements() {
            let b = ((s / MOTION_BIN_WIDTH) as usize).min(MOTION_BINS - 1);
            values[b] += 1.0;
            count += 1;
            sum += s;
            max = max.max(s);
        }
    }
    if count == 0 {
        return Err(Error::Empty("flow field"));
    }
    values[..MOTION_BINS].iter_mut().for_each(|h| *h /= count as f64);
    values[MOTION_BINS] = sum / count as f64;
    values[MOTION_BINS + 1] = max;
    Ok(FeatureVector::new(segment_id, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn texture(w: usize, h: usize, seed: u64) -> Vec<u8> {
        let mut rng = SeededRng::new(seed);
        (0..w * h).map(|_| rng.below(256) as u8).collect()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(16, 16, 1);
        let f = estimate_flow(&a, &a, 16, 16, 8, 4).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|&x| x == 0.0));
    }

    #[test]
    fn constant_frames_give_zero_flow() {
        let a = vec![77u8; 24 * 24];
        let f = estimate_flow(&a, &a, 24, 24, 8, 4).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|&x| x == 0.0));
    }

    #[test]
    fn shifted_texture_reports_shift() {
        let (w, h) = (32, 32);
        let a = texture(w, h, 5);
        // b(x, y) = a(x - 2, y): content moves 2 px right.
        let mut b = a.clone();
        for y in 0..h {
            for x in 2..w {
                b[y * w + x] = a[y * w + x - 2];
            }
        }
        let f = estimate_flow(&a, &b, w, h, 8, 4).unwrap();
        for by in [0, 8, 16, 24] {
            for bx in [0, 8, 16] {
                let k = by * w + bx;
                assert_eq!((f.u[k], f.v[k]), (2.0, 0.0), "block at ({bx},{by})");
            }
        }
    }

    #[test]
    fn flow_errors() {
        let a = vec![0u8; 16];
        assert!(estimate_flow(&a, &a[..8], 4, 4, 2, 1).is_err());
        assert!(estimate_flow(&a, &a, 4, 4, 8, 1).is_err());
    }

    #[test]
    fn displacement_values() {
        let f = FlowField::new(3, 1, vec![0.0, 3.0, -2.0], vec![0.0, 4.0, 5.0]).unwrap();
        assert_eq!(pixel_displacement(&f, 0).unwrap(), 0.0);
        assert_eq!(pixel_displacement(&f, 1).unwrap(), 7.0);
        assert_eq!(pixel_displacement(&f, 2).unwrap(), 7.0);
        assert!(pixel_displacement(&f, 3).is_err());
    }

    #[test]
    fn frame_means() {
        assert_eq!(frame_dynamicity(&FlowField::zeros(3, 3)).unwrap(), 0.0);
        let ones = FlowField::new(2, 2, vec![1.0; 4], vec![1.0; 4]).unwrap();
        assert_eq!(frame_dynamicity(&ones).unwrap(), 2.0);
        // S = {0, 7, 7, 2} -> 16 / 4.
        let f = FlowField::new(2, 2, vec![0.0, 3.0, -7.0, 1.0], vec![0.0, -4.0, 0.0, 1.0]).unwrap();
        assert_eq!(frame_dynamicity(&f).unwrap(), 4.0);
        assert!(frame_dynamicity(&FlowField::zeros(0, 0)).is_err());
    }

    #[test]
    fn segment_means() {
        let d2 = FlowField::new(1, 1, vec![1.0], vec![-1.0]).unwrap();
        assert_eq!(segment_dynamicity(std::slice::from_ref(&d2)).unwrap().segment_value, 2.0);
        let d4 = FlowField::new(1, 1, vec![4.0], vec![0.0]).unwrap();
        let d0 = FlowField::zeros(1, 1);
        assert_eq!(segment_dynamicity(&[d0.clone(), d4.clone()]).unwrap().segment_value, 2.0);
        // Per-frame means 2, 4 and 1.5 (from {0, 3}) -> 7.5 / 3.
        let d15 = FlowField::new(2, 1, vec![0.0, 1.0], vec![0.0, -2.0]).unwrap();
        let s = segment_dynamicity(&[d2, d4, d15]).unwrap();
        assert_eq!(s.per_frame, vec![2.0, 4.0, 1.5]);
        assert_eq!(s.segment_value, 2.5);
        assert!(segment_dynamicity(&[]).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_dynamicity(&[0.0, 2.0, 4.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_dynamicity(&[3.0, 3.0, 3.0]).unwrap(), vec![0.5; 3]);
        assert!(normalize_dynamicity(&[]).is_err());
        let vals = [1.5, -2.0, 7.25, 0.0];
        let out = normalize_dynamicity(&vals).unwrap();
        for (o, v) in out.iter().zip(vals) {
            assert_eq!(*o, (v + 2.0) / 9.25);
        }
    }

    #[test]
    fn motion_descriptor_layout() {
        let f = FlowField::new(2, 1, vec![0.0, 3.0], vec![0.0, 4.0]).unwrap();
        let m = motion_features(SegmentId(3), &[f]).unwrap();
        assert_eq!(m.dim(), MOTION_DIM);
        assert_eq!(m.values[0], 0.5);
        assert_eq!(m.values[14], 0.5);
        assert_eq!(m.values[MOTION_BINS], 3.5);
        assert_eq!(m.values[MOTION_BINS + 1], 7.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frame_dynamicity_is_permutation_invariant(
                uv in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
                seed in any::<u64>(),
            ) {
                let (u, v): (Vec<f64>, Vec<f64>) = uv.iter().cloned().unzip();
                let f = FlowField::new(u.len(), 1, u.clone(), v.clone()).unwrap();
                let mut idx: Vec<usize> = (0..u.len()).collect();
                SeededRng::new(seed).shuffle(&mut idx);
                let g = FlowField::new(u.len(), 1, idx.iter().map(|&i| u[i]).collect(), idx.iter().map(|&i| v[i]).collect()).unwrap();
                prop_assert!((frame_dynamicity(&f).unwrap() - frame_dynamicity(&g).unwrap()).abs() < 1e-9);
            }

            #[test]
            fn doubling_increases_and_keeps_ranking(
                fields in proptest::collection::vec(proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 4), 2..6),
            ) {
                let make = |scale: f64| -> Vec<f64> {
                    fields.iter().map(|px| {
                        let (u, v): (Vec<f64>, Vec<f64>) = px.iter().map(|&(a, b)| (a * scale, b * scale)).unzip();
                        segment_dynamicity(&[FlowField::new(2, 2, u, v).unwrap()]).unwrap().segment_value
                    }).collect()
                };
                let base = make(1.0);
                let doubled = make(2.0);
                for (b, d) in base.iter().zip(&doubled) {
                    if *b > 0.0 { prop_assert!(d > b); }
                }
                for i in 0..base.len() {
                    for j in 0..base.len() {
                        prop_assert_eq!(base[i] < base[j], doubled[i] < doubled[j]);
                    }
                }
            }
        }
    }
}
