//! Synthetic surveillance-style videos with injected anomalies.
//!
//! Each video has a static random texture with low-amplitude per-pixel
//! jitter. Anomalous events span runs of consecutive segments; during an
//! event a square patch cut from the texture at its starting position
//! travels `motion_burst` pixels per frame (bouncing at the borders) and is
//! brightened by `20 * separation`. With both knobs at zero the patch is
//! indistinguishable from the background. Some normal segments carry a
//! static global illumination shift: an appearance outlier with no motion.

use std::collections::BTreeSet;
use std::path::Path;

use crate::config::SynthSpec;
use crate::error::{Error, Result};
use crate::ingest::{split_frame_range, write_ground_truth, write_gv8, DatasetManifest, GrayVideo, ManifestEntry};
use crate::rng::SeededRng;

const JITTER: i32 = 3;
const INTENSITY_STEP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub videos: Vec<GrayVideo>,
    /// Frame-level ground truth per video.
    pub labels: Vec<Vec<u8>>,
    /// `(video, segment index)` of every anomalous segment.
    pub anomalous: BTreeSet<(usize, usize)>,
    pub distractors: BTreeSet<(usize, usize)>,
}

/// Places exactly `total` anomalous segments as runs of 1-4 segments.
fn place_events(spec: &SynthSpec, total: usize, rng: &mut SeededRng) -> Vec<(usize, usize, usize)> {
    let segs = spec.segments_per_video;
    let mut taken = vec![vec![false; segs]; spec.videos];
    let mut events = Vec::new();
    let mut remaining = total;
    let mut attempts = 0;
    while remaining > 0 {
        let len = if attempts < 10_000 {
            (2 + rng.below(3)).min(remaining).min(segs)
        } else {
            1
        };
        attempts += 1;
        let video = rng.below(spec.videos);
        let start = rng.below(segs - len + 1);
        if taken[video][start..start + len].iter().any(|&t| t) {
            continue;
        }
        taken[video][start..start + len].iter_mut().for_each(|t| *t = true);
        events.push((video, start, len));
        remaining -= len;
    }
    events.sort();
    events
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let total_segments = spec.videos * spec.segments_per_video;
    let n_anomalous = ((spec.anomaly_rate * total_segments as f64).round() as usize).clamp(1, total_segments - 1);
    let mut layout_rng = SeededRng::new(SeededRng::derive(spec.seed, u64::MAX));
    let events = place_events(spec, n_anomalous, &mut layout_rng);

    let mut anomalous = BTreeSet::new();
    for &(v, s, len) in &events {
        for i in s..s + len {
            anomalous.insert((v, i));
        }
    }
    let mut distractors = BTreeSet::new();
    let mut shifts = vec![vec![0i32; spec.segments_per_video]; spec.videos];
    for v in 0..spec.videos {
        for s in 0..spec.segments_per_video {
            if !anomalous.contains(&(v, s)) && layout_rng.next_f64() < spec.distractor_rate {
                let magnitude = 25 + layout_rng.below(26) as i32;
                shifts[v][s] = if layout_rng.below(2) == 0 { magnitude } else { -magnitude };
                distractors.insert((v, s));
            }
        }
    }

    let patch = (w.min(h) * 3 / 8).max(4);
    let offset = (INTENSITY_STEP * spec.separation).round() as i32;
    let mut videos = Vec::with_capacity(spec.videos);
    let mut labels = Vec::with_capacity(spec.videos);
    for v in 0..spec.videos {
        let mut rng = SeededRng::new(SeededRng::derive(spec.seed, v as u64));
        let background: Vec<i32> = (0..w * h).map(|_| 50 + rng.below(151) as i32).collect();
        let views = split_frame_range(v as u32, spec.frames_per_video, spec.segments_per_video)?;
        let mut frames = Vec::with_capacity(spec.frames_per_video);
        let mut frame_labels = vec![0u8; spec.frames_per_video];
        for view in &views {
            for f in view.start..view.end {
                frames.push(
                    background
                        .iter()
                        .map(|&b| b + shifts[v][view.index] + rng.below((2 * JITTER + 1) as usize) as i32 - JITTER)
                        .collect::<Vec<i32>>(),
                );
                if anomalous.contains(&(v, view.index)) {
                    frame_labels[f] = 1;
                }
            }
        }

        for &(ev, s, len) in events.iter().filter(|e| e.0 == v) {
            debug_assert_eq!(ev, v);
            let first = views[s].start;
            let last = views[s + len - 1].end;
            let max_x = (w - patch) as f64;
            let max_y = (h - patch) as f64;
            let ox = rng.below(w - patch + 1);
            let oy = rng.below(h - patch + 1);
            let angle = rng.uniform(0.0, std::f64::consts::TAU);
            let (mut vx, mut vy) = (spec.motion_burst * angle.cos(), spec.motion_burst * angle.sin());
            let (mut x, mut y) = (ox as f64, oy as f64);
            let content: Vec<i32> = (0..patch * patch)
                .map(|i| background[(oy + i / patch) * w + ox + i % patch] + offset)
                .collect();
            for frame in frames.iter_mut().take(last).skip(first) {
                let (px, py) = (x.round() as usize, y.round() as usize);
                for r in 0..patch {
                    for c in 0..patch {
                        let jitter = rng.below((2 * JITTER + 1) as usize) as i32 - JITTER;
                        frame[(py + r) * w + px + c] = content[r * patch + c] + jitter;
                    }
                }
                x += vx;
                y += vy;
                if x < 0.0 || x > max_x {
                    vx = -vx;
                    x = x.clamp(0.0, max_x);
                }
                if y < 0.0 || y > max_y {
                    vy = -vy;
                    y = y.clamp(0.0, max_y);
                }
            }
        }

        let frames = frames
            .into_iter()
            .map(|f| f.into_iter().map(|p| p.clamp(0, 255) as u8).collect())
            .collect();
        videos.push(GrayVideo::new(w, h, frames)?);
        labels.push(frame_labels);
    }
    Ok(SynthDataset {
        videos,
        labels,
        anomalous,
        distractors,
    })
}

/// Writes `videos/video_NNN.gv8`, `gt/video_NNN.txt`, `synth.json` and
/// `manifest.json` under `out_dir`. The returned manifest has resolved paths.
pub fn write_dataset(spec: &SynthSpec, data: &SynthDataset, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::with_capacity(data.videos.len());
    for (i, (video, labels)) in data.videos.iter().zip(&data.labels).enumerate() {
        let video_rel = format!("videos/video_{i:03}.gv8");
        let gt_rel = format!("gt/video_{i:03}.txt");
        write_gv8(out.join(&video_rel), video)?;
        write_ground_truth(out.join(&gt_rel), labels)?;
        entries.push(ManifestEntry {
            video: video_rel.into(),
            features: None,
            flow: None,
            ground_truth: Some(gt_rel.into()),
        });
    }
    let manifest = DatasetManifest {
        entries,
        segment_count_per_video: spec.segments_per_video,
    };
    manifest.save(out.join("manifest.json"))?;
    let spec_path = out.join("synth.json");
    let mut text = serde_json::to_string_pretty(spec)?;
    text.push('\n');
    std::fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    DatasetManifest::load(out.join("manifest.json"))
}
