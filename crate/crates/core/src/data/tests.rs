use super::*;
use proptest::prelude::*;
use std::collections::HashSet;

fn rec(path: &str, artist: &str) -> Record {
    Record { path: path.into(), artist: artist.into(), style: "s".into(), split: None }
}

fn synthetic_manifest(counts: &[usize]) -> Manifest {
    let mut records = Vec::new();
    for (a, &c) in counts.iter().enumerate() {
        for i in 0..c {
            records.push(rec(&format!("{a}/{i}.ppm"), &format!("artist{a:02}")));
        }
    }
    Manifest::new("/nonexistent", records).unwrap()
}

#[test]
fn ids_follow_sorted_names() {
    let text = "# artfusion-manifest v1\npath\tartist\tstyle\tsplit\na.ppm\tZed\tink\ttrain\nb.ppm\tAmy\toil\t-\nc.ppm\tZed\tink\n";
    let m = Manifest::parse(text, "/r").unwrap();
    assert_eq!(m.num_classes(), 2);
    assert_eq!(m.artists, vec!["Amy", "Zed"]);
    assert_eq!(m.artist_id(&m.records[0]), 1);
    assert_eq!(m.records[0].split, Some(Split::Train));
    assert_eq!(m.records[1].split, None);
    assert_eq!(Manifest::parse(&m.to_text(), "/r").unwrap().records, m.records);
}

#[test]
fn duplicate_paths_and_bad_rows_are_rejected() {
    let e = Manifest::new("/", vec![rec("x.ppm", "a"), rec("x.ppm", "b")]).unwrap_err();
    assert_eq!(e.category(), "input");
    assert!(e.to_string().contains("x.ppm"));
    let bad = "# artfusion-manifest v1\npath\tartist\tstyle\tsplit\na.ppm\tA\n";
    let e = Manifest::parse(bad, "/").unwrap_err();
    assert!(e.to_string().contains("line 3"), "{e}");
    let bad_split = "# artfusion-manifest v1\npath\tartist\tstyle\tsplit\na.ppm\tA\ts\tholdout\n";
    assert!(Manifest::parse(bad_split, "/").unwrap_err().to_string().contains("line 3"));
    assert_eq!(Manifest::parse("path\tartist\n", "/").unwrap_err().category(), "format");
}

#[test]
fn load_checks_files_exist() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.tsv");
    std::fs::write(&p, "# artfusion-manifest v1\npath\tartist\tstyle\tsplit\nmissing.ppm\tA\ts\t-\n").unwrap();
    assert!(Manifest::load(&p).unwrap_err().to_string().contains("missing.ppm"));
    assert_eq!(Manifest::load(&dir.path().join("nope.tsv")).unwrap_err().category(), "io");
}

#[test]
fn split_examples() {
    let m = synthetic_manifest(&[50, 50]);
    let s = split_dataset(&m, [7, 1, 2], 3, false).unwrap();
    assert_eq!([s.indices(Split::Train).len(), s.indices(Split::Val).len(), s.indices(Split::Test).len()], [70, 10, 20]);
    assert_eq!(s, split_dataset(&m, [7, 1, 2], 3, false).unwrap());
    assert_ne!(s, split_dataset(&m, [7, 1, 2], 4, false).unwrap());
    assert_eq!(split_dataset(&s, [7, 1, 2], 3, false).unwrap_err().category(), "config");
    assert!(split_dataset(&s, [7, 1, 2], 3, true).is_ok());
    let twelve = split_dataset(&synthetic_manifest(&[12]), [7, 1, 2], 0, false).unwrap();
    assert_eq!(twelve.class_counts(Split::Train), vec![8]);
    assert_eq!(twelve.class_counts(Split::Test), vec![3]);
}

#[test]
fn small_artists_fall_back_to_unstratified() {
    let m = synthetic_manifest(&[2, 8]);
    let s = split_dataset(&m, [7, 1, 2], 1, false).unwrap();
    assert_eq!(s.indices(Split::Train).len(), 7);
    assert!(s.is_split());
}

#[test]
fn stats_count_styles_and_splits() {
    let mut m = synthetic_manifest(&[5, 5]);
    m.records[0].style = "t".into();
    let m = Manifest::new("/", m.records).unwrap();
    let s = split_dataset(&m, [7, 1, 2], 0, false).unwrap();
    let st = DatasetStats::of(&s);
    assert_eq!(st.styles, vec!["s", "t"]);
    assert_eq!(st.artist_counts.iter().flatten().sum::<usize>(), 10);
    assert_eq!(st.style_counts.iter().map(|r| r[1]).sum::<usize>(), 1);
    assert!(st.to_text().contains("train: 7 samples"));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn split_is_a_partition(counts in prop::collection::vec(1usize..30, 2..6), seed in 0u64..1000) {
        let m = synthetic_manifest(&counts);
        let s = split_dataset(&m, [7, 1, 2], seed, false).unwrap();
        prop_assert!(s.is_split());
        let sets: Vec<HashSet<&str>> = Split::ALL
            .iter()
            .map(|&sp| s.indices(sp).into_iter().map(|i| s.records[i].path.as_str()).collect())
            .collect();
        prop_assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
        prop_assert_eq!(sets.iter().map(HashSet::len).sum::<usize>(), m.records.len());
        let sizes: Vec<usize> = sets.iter().map(HashSet::len).collect();
        prop_assert_eq!(sizes, largest_remainder(m.records.len(), &[7, 1, 2]));
    }

    #[test]
    fn largest_remainder_sums_and_stays_within_one(n in 0usize..5000, r in prop::collection::vec(0usize..10, 1..5)) {
        prop_assume!(r.iter().sum::<usize>() > 0);
        let s = largest_remainder(n, &r);
        prop_assert_eq!(s.iter().sum::<usize>(), n);
        let total: usize = r.iter().sum();
        for (si, ri) in s.iter().zip(&r) {
            let q = (n * ri) as f64 / total as f64;
            prop_assert!((*si as f64 - q).abs() < 1.0);
        }
    }
}
