use pairsed::formats::*;
use pairsed::manifest::*;
use pairsed_core::meso::{FField, GridSpec, Interp, OutsidePolicy};
use pairsed_core::micro::{MicroState, Snapshot, SnapshotDiagnostics};
use pairsed_core::Vec3;
use proptest::prelude::*;

fn field(dims: [usize; 3], values: Vec<Vec3>) -> FField {
    let grid = GridSpec::spanning(Vec3::new(-1.0, -0.5, 0.25), Vec3::new(1.0, 2.0, 3.0), dims).unwrap();
    FField { grid, values, interp: Interp::Tricubic, outside: OutsidePolicy::Error }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_round_trip_is_bit_exact(
        (dims, values) in ([2usize..6, 2usize..6, 2usize..6]).prop_flat_map(|d| {
            let n = d[0] * d[1] * d[2];
            (Just(d), proptest::collection::vec(proptest::array::uniform3(any::<f64>()), n))
        }),
        time in any::<f64>(),
    ) {
        let f = field(dims, values.into_iter().map(Vec3).collect());
        let mut buf = Vec::new();
        write_grid_to(&mut buf, &f, time).unwrap();
        let (g, t) = read_grid_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(t.to_bits(), time.to_bits());
        prop_assert_eq!(g.grid, f.grid);
        prop_assert_eq!(g.interp, f.interp);
        for (a, b) in g.values.iter().zip(&f.values) {
            for k in 0..3 {
                prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }
}

#[test]
fn grid_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.fgrd");
    let f = field([3, 4, 5], (0..60).map(|i| Vec3::new(i as f64 / 7.0, -1e-300, 1e300)).collect());
    write_grid(&p, &f, 0.125).unwrap();
    let (g, t) = read_grid(&p).unwrap();
    assert_eq!((g, t), (f, 0.125));
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], GRID_MAGIC);
}

#[test]
fn corrupt_grids_rejected() {
    let f = field([2, 2, 2], vec![Vec3::ZERO; 8]);
    let mut buf = Vec::new();
    write_grid_to(&mut buf, &f, 0.0).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_grid_from(&mut bad.as_slice()).is_err());
    let short = &buf[..buf.len() - 8];
    assert!(read_grid_from(&mut &short[..]).is_err());
}

fn snapshot(t: f64, shift: f64) -> Snapshot {
    let state = MicroState {
        time: t,
        centers: vec![Vec3::new(shift, 0.1, 1.0 / 3.0), Vec3::new(-1.0, 2.0, shift)],
        xi: vec![Vec3::new(0.0, 0.0, 2.0), Vec3::new(1.5, 1.5, 0.1)],
    };
    Snapshot {
        state,
        diagnostics: SnapshotDiagnostics {
            d_min: 1.0,
            w_inf_proxy: 0.3,
            ratio2: 0.1,
            ratio3: 0.2,
            xi_min: 2.0,
            xi_max: 2.2,
            flags: vec![],
        },
    }
}

#[test]
fn trajectory_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    let snaps = [snapshot(0.0, 0.7), snapshot(0.1, 0.1 + 0.2)];
    write_trajectory_csv(&p, &snaps).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("# format_version=1\nt,i,xp_x,"));
    let rows = read_trajectory_csv(&p).unwrap();
    assert_eq!(rows.len(), 4);
    for (k, r) in rows.iter().enumerate() {
        let s = &snaps[k / 2].state;
        assert_eq!(r.t, s.time);
        assert_eq!(r.i, k % 2);
        assert_eq!(r.center, s.centers[k % 2]);
        assert_eq!(r.xi, s.xi[k % 2]);
    }
}

#[test]
fn snapshots_jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.jsonl");
    let snaps = [snapshot(0.0, 0.7), snapshot(0.5, -0.3)];
    write_snapshots_jsonl(&p, &snaps).unwrap();
    let recs = read_snapshots_jsonl(&p).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[1].t, 0.5);
    assert_eq!(recs[1].centers[0], snaps[1].state.centers[0].0);
}

#[test]
fn manifest_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), b"alpha").unwrap();
    std::fs::write(dir.path().join("b.txt"), b"beta").unwrap();
    let cfg = pairsed::parse_config("mode = \"kernels_check\"").unwrap();
    let m = write_manifest(dir.path(), &cfg, &["b.txt".into(), "a.txt".into()]).unwrap();
    assert_eq!(m.files[0].name, "a.txt");
    assert_eq!(m.files[0].sha256, sha256_hex(b"alpha"));
    assert!(verify_manifest(dir.path(), &m).unwrap().is_empty());
    std::fs::write(dir.path().join("b.txt"), b"gamma").unwrap();
    assert_eq!(verify_manifest(dir.path(), &m).unwrap(), vec!["b.txt".to_string()]);
}
