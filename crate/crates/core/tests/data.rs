use std::collections::BTreeSet;
use std::path::Path;

use bevrep::data::balance::steer_bin;
use bevrep::data::format::{file_hash, record_len};
use bevrep::data::*;
use bevrep::raster::png_io::read_png;
use bevrep::raster::BevSpec;
use bevrep::sim::SimConfig;
use proptest::prelude::*;

fn small_cfg() -> CollectConfig {
    CollectConfig {
        sim: SimConfig { n_agents: 20, ..Default::default() },
        episode_steps: 60,
        warmup_steps: 10,
        frame_stride: 5,
        ..Default::default()
    }
}

fn collect_small(dir: &Path, name: &str, n: usize, seed: u64, kind: DatasetKind) -> std::path::PathBuf {
    let p = dir.join(name);
    collect(&small_cfg(), &BevSpec::default(), n, seed, kind, &p).unwrap();
    p
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = collect_small(dir.path(), "a.bvds", 12, 3, DatasetKind::Ae);
    let mut ds = Dataset::open(&a).unwrap();
    assert_eq!(ds.len(), 12);
    let b = dir.path().join("b.bvds");
    let mut w = DatasetWriter::create(&b, ds.manifest().clone()).unwrap();
    for i in 0..ds.len() {
        w.push(&ds.read(i).unwrap()).unwrap();
    }
    w.finish().unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn random_access_matches_sequential_reads() {
    let dir = tempfile::tempdir().unwrap();
    let p = collect_small(dir.path(), "a.bvds", 15, 4, DatasetKind::Policy);
    let mut ds = Dataset::open(&p).unwrap();
    let mut seq = Vec::new();
    ds.for_each(|_, r| {
        seq.push(r);
        Ok(())
    })
    .unwrap();
    for i in [14, 0, 7, 3, 14, 9] {
        assert_eq!(ds.read(i).unwrap(), seq[i]);
    }
    // Policy data carries no masks.
    assert!(seq.iter().all(|r| r.pred.is_empty() && r.plan.is_empty()));
    let m = ds.manifest();
    assert!(std::fs::metadata(&p).unwrap().len() as usize > m.record_count * record_len(256, false));
    assert!(m.offsets.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn corrupted_record_names_its_index() {
    let dir = tempfile::tempdir().unwrap();
    let p = collect_small(dir.path(), "a.bvds", 6, 5, DatasetKind::Policy);
    let ds = Dataset::open(&p).unwrap();
    let len = ds.manifest().record_len() as u64;
    let total = std::fs::metadata(&p).unwrap().len();
    let start = total - 6 * len;
    drop(ds);
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[(start + 4 * len + 1000) as usize] ^= 0x40;
    std::fs::write(&p, &bytes).unwrap();
    let mut ds = Dataset::open(&p).unwrap();
    assert!(ds.read(3).is_ok());
    match ds.read(4) {
        Err(DataError::Checksum { index }) => assert_eq!(index, 4),
        other => panic!("expected a checksum error, got {other:?}"),
    }
    let msg = ds.read(4).unwrap_err().to_string();
    assert!(msg.contains("record 4"), "{msg}");
}

#[test]
fn load_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let p = collect_small(dir.path(), "a.bvds", 4, 6, DatasetKind::Policy);
    let good = std::fs::read(&p).unwrap();
    let write = |name: &str, bytes: &[u8]| {
        let q = dir.path().join(name);
        std::fs::write(&q, bytes).unwrap();
        q
    };

    let truncated = write("t.bvds", &good[..good.len() - 10]);
    assert!(matches!(Dataset::open(&truncated), Err(DataError::Truncated { .. })));
    let tiny = write("tiny.bvds", &good[..7]);
    assert!(matches!(Dataset::open(&tiny), Err(DataError::TruncatedAt(_))));

    let mut v = good.clone();
    v[4] = 9;
    assert!(matches!(Dataset::open(&write("v.bvds", &v)), Err(DataError::Version { found: 9, expected: 1 })));

    let mut m = good.clone();
    m[0] = b'X';
    assert!(matches!(Dataset::open(&write("m.bvds", &m)), Err(DataError::BadMagic)));

    let other_spec = BevSpec { fov: 50.0, ..Default::default() };
    let err = Dataset::open_compatible(&p, &other_spec, None).unwrap_err();
    assert!(matches!(err, DataError::Incompatible { what: "BevSpec", .. }), "{err}");
    let other_sim = CollectConfig { frame_stride: 2, ..small_cfg() }.sim_hash();
    let err = Dataset::open_compatible(&p, &BevSpec::default(), Some(&other_sim)).unwrap_err();
    assert!(matches!(err, DataError::Incompatible { what: "simulator config", .. }));
    assert!(Dataset::open_compatible(&p, &BevSpec::default(), Some(&small_cfg().sim_hash())).is_ok());
}

#[test]
fn collection_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = collect_small(dir.path(), "a.bvds", 10, 7, DatasetKind::Ae);
    let b = collect_small(dir.path(), "b.bvds", 10, 7, DatasetKind::Ae);
    let c = collect_small(dir.path(), "c.bvds", 10, 8, DatasetKind::Ae);
    assert_eq!(file_hash(&a).unwrap(), file_hash(&b).unwrap());
    assert_ne!(file_hash(&a).unwrap(), file_hash(&c).unwrap());
}

#[test]
fn records_are_well_formed_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = collect_small(dir.path(), "a.bvds", 20, 9, DatasetKind::Ae);
    let mut ds = Dataset::open(&p).unwrap();
    let spec = BevSpec::default();
    let steps = small_cfg().frame_steps(&spec);
    assert_eq!(steps.first(), Some(&10));
    assert_eq!(steps.last(), Some(&50));
    let manifest = ds.manifest().clone();
    let mut episodes = BTreeSet::new();
    for i in 0..ds.len() {
        let r = ds.read(i).unwrap();
        episodes.insert(r.episode);
        assert!(steps.contains(&(r.frame as usize)));
        assert!(r.plan.iter().any(|&v| v != 0), "record {i} has an empty plan mask");
        assert!(r.pred.iter().chain(&r.plan).all(|&v| v == 0 || v == 255));
        assert!(r.steer.is_finite() && r.steer.abs() <= 0.25);
        assert!(r.acc_class <= 2);
        // Self-supervision: re-simulating and re-rendering reproduces the record.
        if i % 7 == 0 {
            assert_eq!(regenerate_record(&manifest, r.episode, r.frame).unwrap(), r);
        }
    }
    assert_eq!(episodes.len(), 3);
}

#[test]
fn short_episodes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CollectConfig { episode_steps: 20, warmup_steps: 0, ..small_cfg() };
    let err = collect(&cfg, &BevSpec::default(), 5, 0, DatasetKind::Ae, &dir.path().join("x")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let ok = CollectConfig { episode_steps: 21, warmup_steps: 0, ..small_cfg() };
    let m = collect(&ok, &BevSpec::default(), 2, 0, DatasetKind::Ae, &dir.path().join("y")).unwrap();
    assert_eq!(m.record_count, 2);
    assert!(collect(&ok, &BevSpec::default(), 0, 0, DatasetKind::Ae, &dir.path().join("z")).is_err());
}

#[test]
fn arrays_hold_block_means() {
    let dir = tempfile::tempdir().unwrap();
    let p = collect_small(dir.path(), "a.bvds", 3, 10, DatasetKind::Ae);
    let mut ds = Dataset::open(&p).unwrap();
    let arr = AeArrays::load(&mut ds, &[2, 0]).unwrap();
    let batch = arr.batch::<f64>(&[0, 1]);
    assert_eq!(batch.image.shape(), &[2, 3, 64, 64]);
    assert_eq!(batch.plan.shape(), &[2, 1, 64, 64]);
    let r = ds.read(2).unwrap();
    // Direct mean of a 4×4 block, channel 1, cell (row 40, col 31).
    let mut sum = 0.0;
    for dr in 0..4 {
        for dc in 0..4 {
            sum += r.image[((160 + dr) * 256 + 124 + dc) * 3 + 1] as f64;
        }
    }
    let got = batch.image.data()[4096 + 40 * 64 + 31];
    assert!((got - sum / (16.0 * 255.0)).abs() < 1e-15);
    let plan_mean: f64 = r.plan.iter().map(|&v| v as f64 / 255.0).sum::<f64>() / (64.0 * 64.0 * 16.0);
    let got_mean: f64 = batch.plan.data()[..4096].iter().sum::<f64>() / 4096.0;
    assert!((plan_mean - got_mean).abs() < 1e-12);

    let mut pd = Dataset::open(&collect_small(dir.path(), "p.bvds", 3, 10, DatasetKind::Policy)).unwrap();
    assert!(AeArrays::load(&mut pd, &[0]).is_err());
    let pa = PolicyArrays::load(&mut pd, &[0, 1, 2]).unwrap();
    assert_eq!(pa.images::<f32>(&[1]).shape(), &[1, 3, 64, 64]);
}

#[test]
fn png_export_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let p = collect_small(dir.path(), "a.bvds", 2, 11, DatasetKind::Ae);
    let mut ds = Dataset::open(&p).unwrap();
    let files = export_png(&mut ds, 1, dir.path(), "rec1").unwrap();
    assert_eq!(files.len(), 3);
    let r = ds.read(1).unwrap();
    assert_eq!(read_png(&files[0]).unwrap().0, r.image);
    assert_eq!(read_png(&files[2]).unwrap().0, r.plan);
}

#[test]
fn balancing_caps_a_dominant_zero_bin() {
    // 90% of the mass in the zero bin, the rest spread over the other bins.
    let mut steers = vec![0.0f32; 9000];
    for k in 0..1000 {
        let b = k % 20;
        let b = if b >= 10 { b + 1 } else { b };
        steers.push(-0.25 + (b as f32 + 0.5) * 0.5 / 21.0);
    }
    let before = histogram(&steers, 21);
    assert!(before[10] as f64 >= 10.0 * median_nonempty(&before));
    let keep = balance_indices(&steers, 21, 2.0, 1).unwrap();
    let after = histogram(&keep.iter().map(|&i| steers[i]).collect::<Vec<_>>(), 21);
    assert!(max_median_ratio(&after) <= 2.0);
    assert_eq!(after[10], 100);
    assert_eq!(keep.len(), 1100);
}

#[test]
fn balancing_a_uniform_histogram_only_shuffles() {
    let steers: Vec<f32> = (0..210).map(|i| -0.25 + ((i % 21) as f32 + 0.5) * 0.5 / 21.0).collect();
    let keep = balance_indices(&steers, 21, 2.0, 5).unwrap();
    let set: BTreeSet<usize> = keep.iter().copied().collect();
    assert_eq!(set.len(), 210);
    assert_ne!(keep, (0..210).collect::<Vec<_>>());
    assert_eq!(keep, balance_indices(&steers, 21, 2.0, 5).unwrap());
    assert!(balance_indices(&[], 21, 2.0, 5).is_err());
}

#[test]
fn balanced_dataset_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = collect_small(dir.path(), "raw.bvds", 40, 12, DatasetKind::Policy);
    let mut raw = Dataset::open(&p).unwrap();
    let out = dir.path().join("bal.bvds");
    let m = balance_policy_dataset(&mut raw, &out, 21, 2.0, 3).unwrap();
    let mut bal = Dataset::open(&out).unwrap();
    assert_eq!(bal.len(), m.record_count);
    let mut steers = Vec::new();
    bal.for_each(|_, r| {
        steers.push(r.steer);
        Ok(())
    })
    .unwrap();
    assert!(max_median_ratio(&histogram(&steers, 21)) <= 2.0);
    let split = m.split.unwrap();
    assert_eq!(split.train.len() + split.test.len(), m.record_count);
}

#[test]
fn split_sizes_for_a_twenty_thousand_train_split() {
    let fracs = [1.0, 0.5, 0.25, 0.125, 0.0625];
    let s = split_and_subset(25_000, 0.8, &fracs, 42).unwrap();
    assert_eq!(s.train.len(), 20_000);
    assert_eq!(s.test.len(), 5_000);
    let sizes: Vec<usize> = s.subsets.iter().map(|(_, v)| v.len()).collect();
    assert_eq!(sizes, vec![20_000, 10_000, 5_000, 2_500, 1_250]);
    // AE sweep sizes at a 16k train split.
    let s16 = split_and_subset(20_000, 0.8, &fracs, 1).unwrap();
    let sizes: Vec<usize> = s16.subsets.iter().map(|(_, v)| v.len()).collect();
    assert_eq!(sizes, vec![16_000, 8_000, 4_000, 2_000, 1_000]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn balancing_invariants(
        steers in prop::collection::vec(-0.25f32..=0.25, 1..400),
        zeros in 0usize..2000,
        seed in any::<u64>(),
    ) {
        let mut steers = steers;
        steers.extend(std::iter::repeat(0.0).take(zeros));
        let before = histogram(&steers, 21);
        let keep = balance_indices(&steers, 21, 2.0, seed).unwrap();
        let set: BTreeSet<usize> = keep.iter().copied().collect();
        prop_assert_eq!(set.len(), keep.len());
        prop_assert!(keep.iter().all(|&i| i < steers.len()));
        let after = histogram(&keep.iter().map(|&i| steers[i]).collect::<Vec<_>>(), 21);
        prop_assert!(max_median_ratio(&after) <= 2.0 + 1e-12);
        // Bins at or below the cap are untouched.
        let cap = (2.0 * median_nonempty(&before)).floor() as usize;
        for b in 0..21 {
            prop_assert_eq!(after[b], before[b].min(cap));
        }
        prop_assert_eq!(steer_bin(0.0, 21), 10);
    }

    #[test]
    fn split_invariants(n in 2usize..3000, seed in any::<u64>()) {
        let fracs = [1.0, 0.5, 0.25, 0.125, 0.0625];
        let s = split_and_subset(n, 0.8, &fracs, seed).unwrap();
        let train: BTreeSet<u32> = s.train.iter().copied().collect();
        let test: BTreeSet<u32> = s.test.iter().copied().collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert!(train.union(&test).all(|&i| (i as usize) < n));
        for w in s.subsets.windows(2) {
            let big: BTreeSet<u32> = w[0].1.iter().copied().collect();
            prop_assert!(w[1].1.iter().all(|i| big.contains(i)));
        }
        prop_assert!(s.subsets.iter().all(|(_, v)| v.iter().all(|i| train.contains(i))));
        prop_assert_eq!(&s, &split_and_subset(n, 0.8, &fracs, seed).unwrap());
    }
}
