use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::model::{Pose, Trajectory, Vec3};

/// Quaternions whose norm is off by more than this are rejected; smaller
/// deviations are renormalised.
const QUAT_NORM_TOLERANCE: f64 = 1e-3;

/// Parses a TUM trajectory (`timestamp tx ty tz qx qy qz qw` per line,
/// `#` comments) into a trajectory tagged with `frame_id`.
pub fn parse_trajectory(bytes: &[u8], frame_id: &str) -> Result<Trajectory> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::parse(line, "invalid UTF-8")
    })?;
    let mut poses: Vec<Pose> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(line_no, format!("expected 8 fields, found {}", fields.len())));
        }
        let mut v = [0.0f64; 8];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(line_no, format!("bad number `{field}`")))?;
        }
        let [t, tx, ty, tz, qx, qy, qz, qw] = v;
        let q = Quaternion::new(qw, qx, qy, qz);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUAT_NORM_TOLERANCE {
            return Err(Error::parse(line_no, format!("quaternion norm {norm} is not unit")));
        }
        if let Some(prev) = poses.last() {
            if t <= prev.timestamp {
                return Err(Error::parse(
                    line_no,
                    format!("timestamp {t} does not increase (previous {})", prev.timestamp),
                ));
            }
        }
        poses.push(Pose {
            timestamp: t,
            rotation: UnitQuaternion::new_normalize(q),
            translation: Vec3::new(tx, ty, tz),
        });
    }
    if poses.is_empty() {
        return Err(Error::parse(0, "trajectory contains no poses"));
    }
    Trajectory::new(frame_id, poses)
}

/// Serialises a trajectory in TUM format with a frame comment.
pub fn write_trajectory(traj: &Trajectory) -> String {
    let mut out = format!("# frame {}\n# timestamp tx ty tz qx qy qz qw\n", traj.frame_id());
    for p in traj.poses() {
        let [w, x, y, z] = p.wxyz();
        let t = p.translation;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            p.timestamp, t.x, t.y, t.z, x, y, z, w
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_identity_pose() {
        let traj = parse_trajectory(b"0.0 0 0 0 0 0 0 1", "M1").unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.frame_id(), "M1");
        let p = traj.poses()[0];
        assert_eq!(p.translation, Vec3::zeros());
        assert_eq!(p.wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fixture_with_header() {
        let text = "# timestamp tx ty tz qx qy qz qw\n\
                    1.5 1.0 2.0 3.0 0 0 0 1\n\
                    2.5 -1.25 0.5 10.0 0 0 0.7071067811865476 0.7071067811865476\n\
                    # trailing comment\n\
                    3.0 4 5 6 1 0 0 0\n";
        let traj = parse_trajectory(text.as_bytes(), "F").unwrap();
        assert_eq!(traj.len(), 3);
        let p = traj.poses();
        assert_eq!(p[0].timestamp, 1.5);
        assert_eq!(p[0].translation, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(p[1].timestamp, 2.5);
        assert_eq!(p[1].translation, Vec3::new(-1.25, 0.5, 10.0));
        let q = p[1].wxyz();
        assert!((q[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15 && (q[3] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(p[2].wxyz(), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(p[2].translation, Vec3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn wrong_arity_names_line() {
        let err = parse_trajectory(b"0.0 0 0 0 0 0 1", "M1").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn quaternion_tolerance() {
        let ok = parse_trajectory(b"0 0 0 0 0 0 0 1.0005", "M1").unwrap();
        assert!((ok.poses()[0].rotation.quaternion().norm() - 1.0).abs() < 1e-12);
        let err = parse_trajectory(b"0 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1.01", "M1").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn rejects_non_increasing() {
        let err = parse_trajectory(b"1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1", "M1").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn write_then_parse_is_exact() {
        let text = "0.1 1.000000001 2 3 0 0 0.6 0.8\n0.2 -4 5.5 6 0 0 0 1\n";
        let traj = parse_trajectory(text.as_bytes(), "M1").unwrap();
        let again = parse_trajectory(write_trajectory(&traj).as_bytes(), "M1").unwrap();
        assert_eq!(traj, again);
    }

    proptest! {
        #[test]
        fn never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_trajectory(&bytes, "M1");
        }

        #[test]
        fn pose_count_matches_non_comment_lines(n in 1usize..40, comments in 0usize..5) {
            let mut text = String::new();
            for c in 0..comments {
                text.push_str(&format!("# comment {c}\n"));
            }
            for i in 0..n {
                text.push_str(&format!("{} {} 0 0 0 0 0 1\n", i as f64 * 0.1, i));
            }
            prop_assert_eq!(parse_trajectory(text.as_bytes(), "M1").unwrap().len(), n);
        }
    }
}
