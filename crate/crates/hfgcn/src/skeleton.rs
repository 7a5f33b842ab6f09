//! Raw skeleton sequences: NTU-style text parsing, body selection,
//! centering, and temporal resampling.

use crate::error::{Error, Result};
use crate::layout::SkeletonLayout;

/// Per-person, per-frame 3D joint coordinates plus label.
///
/// Coordinates are stored as `f32` in `(M, T, V, 3)` row-major order —
/// 32-bit storage matches the on-disk container; the model math widens to
/// `f64`. Absent persons and frames are zero-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub sample_id: String,
    pub label: u32,
    pub num_persons: usize,
    pub num_frames: usize,
    pub num_joints: usize,
    coords: Vec<f32>,
}

impl SkeletonSequence {
    pub fn zeros(sample_id: &str, label: u32, m: usize, t: usize, v: usize) -> Self {
        SkeletonSequence {
            sample_id: sample_id.to_string(),
            label,
            num_persons: m,
            num_frames: t,
            num_joints: v,
            coords: vec![0.0; m * t * v * 3],
        }
    }

    pub fn from_coords(
        sample_id: &str,
        label: u32,
        m: usize,
        t: usize,
        v: usize,
        coords: Vec<f32>,
    ) -> Result<Self> {
        if coords.len() != m * t * v * 3 {
            return Err(Error::Shape(format!(
                "coordinate count {} does not match (M={m}, T={t}, V={v}, 3)",
                coords.len()
            )));
        }
        Ok(SkeletonSequence {
            sample_id: sample_id.to_string(),
            label,
            num_persons: m,
            num_frames: t,
            num_joints: v,
            coords,
        })
    }

    #[inline]
    fn offset(&self, m: usize, t: usize, v: usize) -> usize {
        ((m * self.num_frames + t) * self.num_joints + v) * 3
    }

    pub fn at(&self, m: usize, t: usize, v: usize, axis: usize) -> f32 {
        self.coords[self.offset(m, t, v) + axis]
    }

    pub fn set(&mut self, m: usize, t: usize, v: usize, axis: usize, value: f32) {
        let o = self.offset(m, t, v) + axis;
        self.coords[o] = value;
    }

    pub fn coords(&self) -> &[f32] {
        &self.coords
    }

    /// A person is flagged present when any of its coordinates is nonzero.
    pub fn present_mask(&self) -> Vec<bool> {
        let per_person = self.num_frames * self.num_joints * 3;
        (0..self.num_persons)
            .map(|m| {
                self.coords[m * per_person..(m + 1) * per_person]
                    .iter()
                    .any(|&v| v != 0.0)
            })
            .collect()
    }

    /// Frame is missing when every coordinate of every joint is zero.
    fn frame_nonzero(&self, m: usize, t: usize) -> bool {
        let start = self.offset(m, t, 0);
        let end = start + self.num_joints * 3;
        self.coords[start..end].iter().any(|&v| v != 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_persons == 0 || self.num_frames == 0 || self.num_joints == 0 {
            return Err(Error::Shape(format!(
                "degenerate sequence (M={}, T={}, V={})",
                self.num_persons, self.num_frames, self.num_joints
            )));
        }
        if self.coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "sequence {} contains NaN or Inf",
                self.sample_id
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// NTU-style text parsing
// ---------------------------------------------------------------------------

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    lineno: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        loop {
            match self.iter.next() {
                Some(line) => {
                    self.lineno += 1;
                    if !line.trim().is_empty() {
                        return Ok((self.lineno, line.trim()));
                    }
                    // blank lines are tolerated anywhere
                }
                None => {
                    return Err(Error::Parse {
                        line: self.lineno,
                        msg: "unexpected end of file".into(),
                    })
                }
            }
        }
    }

    fn next_count(&mut self, what: &str) -> Result<usize> {
        let (lineno, line) = self.next()?;
        line.split_whitespace()
            .next()
            .and_then(|tok| tok.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected {what} count, got '{line}'"),
            })
    }
}

struct BodyTrack {
    id: String,
    frames: Vec<Option<Vec<f32>>>, // per frame: V*3 coords
}

/// Parse one NTU-style text skeleton file.
///
/// Documented structure, one number-bearing line each:
/// frame count; per frame a body count; per body a header line (first token
/// is the body id), a joint count (must equal the layout), and one line per
/// joint whose first three fields are the x y z coordinates in meters.
///
/// When more than `max_persons` bodies appear, the bodies with the highest
/// summed frame-to-frame displacement are retained.
pub fn parse_skeleton_text(
    text: &str,
    layout: &SkeletonLayout,
    max_persons: usize,
    sample_id: &str,
    label: u32,
) -> Result<SkeletonSequence> {
    if max_persons == 0 {
        return Err(Error::Config("max_persons must be at least 1".into()));
    }
    let v = layout.num_joints;
    let mut lines = Lines {
        iter: text.lines(),
        lineno: 0,
    };

    let num_frames = lines.next_count("frame")?;
    if num_frames == 0 {
        return Err(Error::Parse {
            line: lines.lineno,
            msg: "file declares zero frames".into(),
        });
    }

    let mut tracks: Vec<BodyTrack> = Vec::new();
    for frame in 0..num_frames {
        let num_bodies = lines.next_count("body")?;
        for _ in 0..num_bodies {
            let (header_line, header) = lines.next()?;
            let body_id = header.split_whitespace().next().ok_or(Error::Parse {
                line: header_line,
                msg: "empty body header".into(),
            })?;

            let joint_count = lines.next_count("joint")?;
            if joint_count != v {
                return Err(Error::Layout(format!(
                    "line {}: body has {joint_count} joints, layout '{}' expects {v}",
                    lines.lineno, layout.name
                )));
            }

            let mut coords = Vec::with_capacity(v * 3);
            for _ in 0..v {
                let (lineno, line) = lines.next()?;
                let mut fields = line.split_whitespace();
                for axis in ["x", "y", "z"] {
                    let tok = fields.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: format!("missing {axis} coordinate"),
                    })?;
                    let value: f32 = tok.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("invalid {axis} coordinate '{tok}'"),
                    })?;
                    if !value.is_finite() {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: format!("non-finite {axis} coordinate '{tok}'"),
                        });
                    }
                    coords.push(value);
                }
            }

            let track = match tracks.iter_mut().find(|t| t.id == body_id) {
                Some(track) => track,
                None => {
                    tracks.push(BodyTrack {
                        id: body_id.to_string(),
                        frames: vec![None; num_frames],
                    });
                    tracks.last_mut().unwrap()
                }
            };
            track.frames[frame] = Some(coords);
        }
    }

    // Rank bodies by total motion energy (summed frame-to-frame displacement)
    // and keep the most active `max_persons`; ties keep file order.
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    if tracks.len() > max_persons {
        let energies: Vec<f64> = tracks.iter().map(motion_energy).collect();
        order.sort_by(|&a, &b| {
            energies[b]
                .partial_cmp(&energies[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(max_persons);
        order.sort_unstable(); // keep original relative order among survivors
    }

    let mut seq = SkeletonSequence::zeros(sample_id, label, max_persons, num_frames, v);
    for (slot, &ti) in order.iter().enumerate() {
        for (t, frame) in tracks[ti].frames.iter().enumerate() {
            if let Some(coords) = frame {
                let start = seq.offset(slot, t, 0);
                seq.coords[start..start + v * 3].copy_from_slice(coords);
            }
        }
    }
    seq.validate()?;
    Ok(seq)
}

/// Summed L2 frame-to-frame joint displacement over frames where the body
/// is present in both frames.
fn motion_energy(track: &BodyTrack) -> f64 {
    let mut energy = 0.0;
    for pair in track.frames.windows(2) {
        if let (Some(a), Some(b)) = (&pair[0], &pair[1]) {
            for (pa, pb) in a.chunks(3).zip(b.chunks(3)) {
                let dx = (pb[0] - pa[0]) as f64;
                let dy = (pb[1] - pa[1]) as f64;
                let dz = (pb[2] - pa[2]) as f64;
                energy += (dx * dx + dy * dy + dz * dz).sqrt();
            }
        }
    }
    energy
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

/// Resample to `t_target` frames with linear interpolation along time.
/// Endpoints map exactly; equal lengths return a bitwise copy.
pub fn resize_temporal(seq: &SkeletonSequence, t_target: usize) -> Result<SkeletonSequence> {
    if t_target == 0 {
        return Err(Error::Config("target frame count must be at least 1".into()));
    }
    seq.validate()?;
    let t_raw = seq.num_frames;
    if t_raw == t_target {
        return Ok(seq.clone());
    }
    let (m, v) = (seq.num_persons, seq.num_joints);
    let mut out = SkeletonSequence::zeros(&seq.sample_id, seq.label, m, t_target, v);
    for i in 0..t_target {
        let p = if t_target == 1 {
            0.0
        } else {
            i as f64 * (t_raw - 1) as f64 / (t_target - 1) as f64
        };
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(t_raw - 1);
        let frac = p - lo as f64;
        for mi in 0..m {
            let src_lo = seq.offset(mi, lo, 0);
            let src_hi = seq.offset(mi, hi, 0);
            let dst = out.offset(mi, i, 0);
            for k in 0..v * 3 {
                let a = seq.coords[src_lo + k] as f64;
                let b = seq.coords[src_hi + k] as f64;
                out.coords[dst + k] = ((1.0 - frac) * a + frac * b) as f32;
            }
        }
    }
    Ok(out)
}

/// Subtract the centering joint of the first populated frame from all
/// populated frames, so coordinates are body-centered. All-zero (absent)
/// frames stay zero.
pub fn center_sequence(seq: &SkeletonSequence, center_joint: usize) -> SkeletonSequence {
    let mut origin = None;
    'outer: for m in 0..seq.num_persons {
        for t in 0..seq.num_frames {
            if seq.frame_nonzero(m, t) {
                let o = seq.offset(m, t, center_joint);
                origin = Some([seq.coords[o], seq.coords[o + 1], seq.coords[o + 2]]);
                break 'outer;
            }
        }
    }
    let Some(origin) = origin else {
        return seq.clone(); // entirely empty sequence
    };
    let mut out = seq.clone();
    for m in 0..seq.num_persons {
        for t in 0..seq.num_frames {
            if !seq.frame_nonzero(m, t) {
                continue;
            }
            let start = out.offset(m, t, 0);
            for vj in 0..seq.num_joints {
                for axis in 0..3 {
                    out.coords[start + vj * 3 + axis] -= origin[axis];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ntu() -> SkeletonLayout {
        SkeletonLayout::ntu25()
    }

    fn body_text(id: &str, coords: impl Fn(usize) -> (f32, f32, f32)) -> String {
        let mut s = format!("{id} 0 0 0 0 0 0 0 0 2\n25\n");
        for j in 0..25 {
            let (x, y, z) = coords(j);
            s.push_str(&format!("{x} {y} {z} 0 0 0 0 0 0 0 0 2\n"));
        }
        s
    }

    #[test]
    fn single_zero_body_parses() {
        let text = format!("1\n1\n{}", body_text("1000", |_| (0.0, 0.0, 0.0)));
        let seq = parse_skeleton_text(&text, &ntu(), 2, "s", 0).unwrap();
        assert_eq!(seq.num_frames, 1);
        assert_eq!(seq.num_persons, 2);
        assert!(seq.coords().iter().all(|&v| v == 0.0));
        assert_eq!(seq.present_mask(), vec![false, false]);
    }

    #[test]
    fn two_bodies_both_retained() {
        let b1 = body_text("a", |j| (j as f32, 0.0, 0.0));
        let b2 = body_text("b", |j| (0.0, j as f32, 0.0));
        let text = format!("1\n2\n{b1}{b2}");
        let seq = parse_skeleton_text(&text, &ntu(), 2, "s", 3).unwrap();
        assert_eq!(seq.label, 3);
        assert_eq!(seq.at(0, 0, 5, 0), 5.0);
        assert_eq!(seq.at(1, 0, 5, 1), 5.0);
    }

    #[test]
    fn most_energetic_bodies_survive() {
        // Three bodies over two frames; displacement per frame step:
        // "slow" moves 0.1 per joint, "mid" 1.0, "fast" 2.0.
        let frame = |ids: &[(&str, f32)], t: f32| {
            let mut s = format!("{}\n", ids.len());
            for (id, step) in ids {
                s.push_str(&body_text(id, |_| (t * step, 0.0, 0.0)));
            }
            s
        };
        let text = format!(
            "2\n{}{}",
            frame(&[("slow", 0.1), ("mid", 1.0), ("fast", 2.0)], 0.0),
            frame(&[("slow", 0.1), ("mid", 1.0), ("fast", 2.0)], 1.0)
        );
        let seq = parse_skeleton_text(&text, &ntu(), 2, "s", 0).unwrap();
        // Brute-force oracle over all bodies: energies are 0.1*25, 1.0*25,
        // 2.0*25, so "mid" and "fast" must be retained, in file order.
        assert_eq!(seq.at(0, 1, 0, 0), 1.0); // mid
        assert_eq!(seq.at(1, 1, 0, 0), 2.0); // fast
    }

    #[test]
    fn joint_count_mismatch_is_layout_error() {
        let text = "1\n1\nid 0\n24\n".to_string();
        match parse_skeleton_text(&text, &ntu(), 2, "s", 0) {
            Err(Error::Layout(_)) => {}
            other => panic!("expected layout error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_coordinate_reports_line() {
        let mut text = String::from("1\n1\nid 0\n25\n");
        text.push_str("bad 0 0\n");
        match parse_skeleton_text(&text, &ntu(), 2, "s", 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn resize_identity_is_bitwise() {
        let mut seq = SkeletonSequence::zeros("s", 0, 1, 3, 25);
        for t in 0..3 {
            seq.set(0, t, 0, 0, t as f32);
        }
        let same = resize_temporal(&seq, 3).unwrap();
        assert_eq!(seq, same);
    }

    #[test]
    fn resize_matches_piecewise_linear_oracle() {
        // frames [0, 3, 6] -> 5 frames should be [0, 1.5, 3, 4.5, 6]
        let mut seq = SkeletonSequence::zeros("s", 0, 1, 3, 25);
        for (t, val) in [0.0f32, 3.0, 6.0].iter().enumerate() {
            seq.set(0, t, 0, 0, *val);
        }
        let out = resize_temporal(&seq, 5).unwrap();
        let got: Vec<f32> = (0..5).map(|t| out.at(0, t, 0, 0)).collect();
        assert_eq!(got, vec![0.0, 1.5, 3.0, 4.5, 6.0]);

        // midpoint case [0, 1] -> [0, 0.5, 1]
        let mut seq2 = SkeletonSequence::zeros("s", 0, 1, 2, 25);
        seq2.set(0, 1, 0, 0, 1.0);
        let out2 = resize_temporal(&seq2, 3).unwrap();
        assert_eq!(
            (0..3).map(|t| out2.at(0, t, 0, 0)).collect::<Vec<_>>(),
            vec![0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn resize_is_idempotent_at_fixed_target() {
        let mut seq = SkeletonSequence::zeros("s", 0, 1, 7, 25);
        for t in 0..7 {
            seq.set(0, t, 3, 1, (t * t) as f32);
        }
        let once = resize_temporal(&seq, 4).unwrap();
        let twice = resize_temporal(&once, 4).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn centering_subtracts_first_frame_spine() {
        let mut seq = SkeletonSequence::zeros("s", 0, 1, 2, 25);
        for t in 0..2 {
            for j in 0..25 {
                seq.set(0, t, j, 0, 1.0 + j as f32);
                seq.set(0, t, j, 1, 2.0);
                seq.set(0, t, j, 2, 3.0);
            }
        }
        let centered = center_sequence(&seq, 1);
        assert_eq!(centered.at(0, 0, 1, 0), 0.0);
        assert_eq!(centered.at(0, 1, 1, 1), 0.0);
        assert_eq!(centered.at(0, 0, 0, 0), -1.0);
    }
}
