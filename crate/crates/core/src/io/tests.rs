use std::io::Cursor;

use proptest::prelude::*;

use super::*;
use crate::scan::{RawPoint, ScanFrame};

fn frame_bytes(frames: &[ScanFrame]) -> Vec<u8> {
    let mut buf = Vec::new();
    for f in frames {
        write_scan_frame(&mut buf, f).unwrap();
    }
    buf
}

fn read_all(bytes: &[u8]) -> Result<Vec<ScanFrame>> {
    PortableScanReader::new(Cursor::new(bytes), "test").collect()
}

#[test]
fn empty_frame() {
    let f = ScanFrame { timestamp: 1.5, points: vec![] };
    let bytes = frame_bytes(&[f.clone()]);
    assert_eq!(bytes.len(), 20);
    assert_eq!(read_all(&bytes).unwrap(), vec![f]);
}

#[test]
fn hand_written_two_points() {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"SSCN");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&0.25f64.to_le_bytes());
    bytes.extend_from_slice(&2u32.to_le_bytes());
    for (x, y, z, l) in [(1.0f32, -2.0f32, 0.5f32, 3u16), (10.25, 0.0, -1.0, 4)] {
        bytes.extend_from_slice(&x.to_le_bytes());
        bytes.extend_from_slice(&y.to_le_bytes());
        bytes.extend_from_slice(&z.to_le_bytes());
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    let frames = read_all(&bytes).unwrap();
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].timestamp, 0.25);
    assert_eq!(
        frames[0].points,
        vec![
            RawPoint { x: 1.0, y: -2.0, z: 0.5, label: 3 },
            RawPoint { x: 10.25, y: 0.0, z: -1.0, label: 4 }
        ]
    );
}

#[test]
fn truncated_stream_names_the_frame() {
    let f = ScanFrame { timestamp: 0.0, points: vec![RawPoint { x: 1.0, y: 1.0, z: 1.0, label: 0 }; 3] };
    let bytes = frame_bytes(&[f.clone(), f]);
    let cut = &bytes[..bytes.len() - 5];
    let err = read_all(cut).unwrap_err();
    assert!(err.to_string().contains("frame 1"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn bad_magic() {
    let mut bytes = frame_bytes(&[ScanFrame::default()]);
    bytes[0] = b'X';
    assert!(read_all(&bytes).is_err());
}

#[test]
fn wide_labels_are_refused() {
    let f = ScanFrame { timestamp: 0.0, points: vec![RawPoint { x: 0.0, y: 0.0, z: 0.0, label: 70_000 }] };
    assert!(write_scan_frame(&mut Vec::new(), &f).is_err());
}

fn arb_frame() -> impl Strategy<Value = ScanFrame> {
    (
        any::<f64>().prop_filter("finite", |t| t.is_finite()),
        prop::collection::vec((any::<f32>(), any::<f32>(), any::<f32>(), any::<u16>()), 0..40),
    )
        .prop_map(|(timestamp, pts)| ScanFrame {
            timestamp,
            points: pts
                .into_iter()
                .map(|(x, y, z, l)| RawPoint { x, y, z, label: l as u32 })
                .collect(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn scan_stream_roundtrip(frames in prop::collection::vec(arb_frame(), 0..100)) {
        let bytes = frame_bytes(&frames);
        let back = read_all(&bytes).unwrap();
        prop_assert_eq!(back.len(), frames.len());
        // compare bit patterns so NaN payloads count too
        prop_assert_eq!(frame_bytes(&back), bytes);
    }
}

#[test]
fn odometry_identity_line() {
    let f = parse_odometry_line("0 1 0 0 0 0 1 0 0 0 0 1 0", "t").unwrap();
    assert_eq!(f.transform, Se3::identity());
}

#[test]
fn odometry_tolerance_rule() {
    let drift = "0 1.0001 0 0 0 0 1 0 0 0 0 1 0";
    let f = parse_odometry_line(drift, "t").unwrap();
    assert!(f.transform.orthonormality_error() < 1e-12);
    assert!(parse_odometry_line("0 1.01 0 0 0 0 1 0 0 0 0 1 0", "t").is_err());
    let reflect = "0 -1 0 0 0 0 1 0 0 0 0 1 0";
    assert!(parse_odometry_line(reflect, "t").is_err());
}

#[test]
fn odometry_errors_carry_line_numbers() {
    let text = "# header\n0 1 0 0 0 0 1 0 0 0 0 1 0\n\n1 1 0 0 x 0 1 0 0 0 0 1 0\n";
    let r: Vec<Result<OdomFrame>> = OdometryReader::new(Cursor::new(text), "odo.txt").collect();
    assert!(r[0].is_ok());
    let err = r[1].as_ref().unwrap_err().to_string();
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn odometry_text_roundtrip() {
    let frames: Vec<OdomFrame> = (0..20)
        .map(|i| OdomFrame {
            timestamp: i as f64 * 0.1,
            transform: Se3::from_se2(&Se2::new(i as f64 * 0.37, -0.2, 0.01 * i as f64)),
        })
        .collect();
    let text: String = frames.iter().map(|f| format_odometry_line(f) + "\n").collect();
    let back: Vec<OdomFrame> = OdometryReader::new(Cursor::new(text.clone()), "t").map(|r| r.unwrap()).collect();
    let again: String = back.iter().map(|f| format_odometry_line(f) + "\n").collect();
    assert_eq!(text, again);
}

fn estimate_at(x: f64, y: f64) -> PosteriorEstimate {
    PosteriorEstimate {
        pose: Se2::new(x, y, 0.1),
        position_cov: [[1.0, 0.0], [0.0, 1.0]],
        heading_var: 0.01,
        scale_mean: 2.0,
        scale_log_var: 0.0,
        converged: true,
        n_particles: 10,
        position_px: [2.0 * x, 2.0 * y],
    }
}

#[test]
fn result_log_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.csv");
    ResultLogWriter::create(&p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{RESULT_LOG_HEADER}\n"));

    let mut w = ResultLogWriter::create(&p).unwrap();
    let e = estimate_at(3.0, 4.0);
    w.write(&ResultRow::from_estimate(0.0, &e, Some(&TruthRow { t: 0.0, pose: Se2::new(3.0, 4.0, 0.0), scale: 2.0 }))).unwrap();
    w.write(&ResultRow::from_estimate(0.1, &e, Some(&TruthRow { t: 0.1, pose: Se2::new(3.0, 1.0, 0.0), scale: 2.0 }))).unwrap();
    w.write(&ResultRow::from_estimate(0.2, &e, None)).unwrap();
    let rows = read_result_log(&p).unwrap();
    assert_eq!(rows[0].err_m, Some(0.0));
    assert_eq!(rows[1].err_m, Some(3.0));
    assert_eq!(rows[2].err_m, None);
    assert!(std::fs::read_to_string(&p).unwrap().ends_with(",1,\n"));
}

#[test]
fn trajectory_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let nodes: Vec<GraphNode> = (0..30)
        .map(|i| GraphNode {
            id: i,
            timestamp: i as f64 / 3.0,
            pose: Se2::new((i as f64).sqrt(), -1e-17 * i as f64, 0.1 * i as f64),
        })
        .collect();
    write_trajectory(&a, &nodes).unwrap();
    let back = read_trajectory(&a).unwrap();
    assert_eq!(back, nodes);
    write_trajectory(&b, &back).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn config_defaults_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.json");
    std::fs::write(&p, r#"{"map": "map.pgm", "scans": "scans.bin", "odometry": "odo.txt"}"#).unwrap();
    let cfg = load_config(&p).unwrap();
    assert_eq!(cfg.filter, crate::mcl::FilterConfig::default());
    assert_eq!(cfg.grid, crate::polar::PolarGridSpec::default());
    assert_eq!(cfg.trunc_radius, 50.0);
    assert_eq!(cfg.resolve(&cfg.map), dir.path().join("map.pgm"));

    let q = dir.path().join("again.json");
    save_config(&q, &cfg).unwrap();
    let back = load_config(&q).unwrap();
    assert_eq!(back, cfg);
    let r = dir.path().join("third.json");
    save_config(&r, &back).unwrap();
    assert_eq!(std::fs::read(&q).unwrap(), std::fs::read(&r).unwrap());
}

#[test]
fn config_validation_names_keys() {
    let base = std::path::Path::new(".");
    let bad = r#"{"map": "m", "scans": "s", "odometry": "o", "filter": {"s_min": 5, "s_max": 2}}"#;
    let msg = parse_config(bad, base, "c").unwrap_err().to_string();
    assert!(msg.contains("s_min") && msg.contains("s_max"), "{msg}");
    let unknown = r#"{"map": "m", "scans": "s", "odometry": "o", "bogus": 1}"#;
    let err = parse_config(unknown, base, "c").unwrap_err();
    assert!(err.to_string().contains("bogus"));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn class_remap_overrides() {
    let base = std::path::Path::new(".");
    let text = r#"{"map": "m", "scans": "s", "odometry": "o", "class_remap": {"5": "terrain", "4": null}}"#;
    let cs = parse_config(text, base, "c").unwrap().class_set().unwrap();
    assert_eq!(cs.resolve(5), Some(crate::semantic_map::TERRAIN));
    assert_eq!(cs.resolve(4), None);
    let bad = r#"{"map": "m", "scans": "s", "odometry": "o", "class_remap": {"5": "lake"}}"#;
    assert!(parse_config(bad, base, "c").is_err());
}

#[test]
fn kitti_layout() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("velodyne")).unwrap();
    std::fs::create_dir(dir.path().join("labels")).unwrap();
    let mut bin = Vec::new();
    for v in [1.0f32, 2.0, 3.0, 0.9, -1.0, 0.0, 0.5, 0.1] {
        bin.extend_from_slice(&v.to_le_bytes());
    }
    let mut lab = Vec::new();
    for l in [40u32 | (7 << 16), 10] {
        lab.extend_from_slice(&l.to_le_bytes());
    }
    for i in 0..2 {
        std::fs::write(dir.path().join(format!("velodyne/{i:06}.bin")), &bin).unwrap();
    }
    std::fs::write(dir.path().join("labels/000000.label"), &lab).unwrap();
    std::fs::write(dir.path().join("labels/000001.label"), &lab[..4]).unwrap();

    let mut r = KittiScanReader::open(dir.path(), 10.0).unwrap();
    assert_eq!(r.len(), 2);
    let f = r.next().unwrap().unwrap();
    assert_eq!(f.points.len(), 2);
    assert_eq!(f.points[0], RawPoint { x: 1.0, y: 2.0, z: 3.0, label: 40 });
    assert_eq!(f.points[1].label, 10);
    let err = r.next().unwrap().unwrap_err().to_string();
    assert!(err.contains("frame 1"), "{err}");
}
