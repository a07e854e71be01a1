use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, ManifestEntry, SplitTag};
use crate::error::{Error, Result};

/// Number of members of a class of size `n` that go to the training side.
///
/// Always the floor or ceiling of `ratio * n`; a singleton goes to train, and a
/// class of two or more keeps at least one member on each side.
pub fn train_share(n: usize, ratio: f64) -> usize {
    match n {
        0 => 0,
        1 => 1,
        _ => ((ratio * n as f64).round() as usize).clamp(1, n - 1),
    }
}

/// Stratified split by record label.
pub fn stratified_split(
    manifest: &DatasetManifest,
    ratio: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    stratified_split_by(manifest, ratio, seed, |e| e.record_label.code())
}

/// Stratified split on an arbitrary class key.
///
/// Deterministic in `(manifest, ratio, seed)`; outputs are sorted by audio path.
pub fn stratified_split_by<F>(
    manifest: &DatasetManifest,
    ratio: f64,
    seed: u64,
    key: F,
) -> Result<(DatasetManifest, DatasetManifest)>
where
    F: Fn(&ManifestEntry) -> usize,
{
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let mut classes: BTreeMap<usize, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        classes.entry(key(e)).or_default().push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, mut members) in classes {
        if members.len() == 1 {
            log::warn!("class {class} has a single member; it goes to the training split");
        }
        members.sort_by(|a, b| a.audio.cmp(&b.audio));
        members.shuffle(&mut rng);
        let k = train_share(members.len(), ratio);
        train.extend(members[..k].iter().map(|e| (*e).clone()));
        val.extend(members[k..].iter().map(|e| (*e).clone()));
    }
    Ok((
        DatasetManifest::new(train, SplitTag::Train),
        DatasetManifest::new(val, SplitTag::Val),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::labels::RecordLabel;
    use std::path::PathBuf;

    fn manifest(counts: &[(RecordLabel, usize)]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                entries.push(ManifestEntry {
                    audio: PathBuf::from(format!("{}_{i:05}.wav", label.code())),
                    annotation: PathBuf::from(format!("{}_{i:05}.json", label.code())),
                    record_label: *label,
                    events: vec![],
                });
            }
        }
        DatasetManifest::new(entries, SplitTag::Train)
    }

    #[test]
    fn ten_members_split_nine_one() {
        let m = manifest(&[(RecordLabel::Normal, 10)]);
        let (t, v) = stratified_split(&m, 0.9, 3).unwrap();
        assert_eq!((t.len(), v.len()), (9, 1));
    }

    #[test]
    fn same_seed_same_partition() {
        let m = manifest(&[(RecordLabel::Normal, 40), (RecordLabel::Das, 13)]);
        let a = stratified_split(&m, 0.9, 11).unwrap();
        let b = stratified_split(&m, 0.9, 11).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&m, 0.9, 12).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn singleton_goes_to_train() {
        let m = manifest(&[(RecordLabel::Normal, 5), (RecordLabel::PoorQuality, 1)]);
        let (t, v) = stratified_split(&m, 0.9, 0).unwrap();
        assert_eq!(t.class_counts.record_count(RecordLabel::PoorQuality), 1);
        assert_eq!(v.class_counts.record_count(RecordLabel::PoorQuality), 0);
    }

    #[test]
    fn record_training_table_split_size() {
        let counts = [
            (RecordLabel::Normal, 1303),
            (RecordLabel::Cas, 126),
            (RecordLabel::Das, 248),
            (RecordLabel::CasAndDas, 95),
            (RecordLabel::PoorQuality, 177),
        ];
        // Oracle: each class contributes floor or ceil of 0.9 * n.
        let lo: usize = counts.iter().map(|(_, n)| (0.9 * *n as f64).floor() as usize).sum();
        let hi: usize = counts.iter().map(|(_, n)| (0.9 * *n as f64).ceil() as usize).sum();
        assert_eq!((lo, hi), (1752, 1757));
        let m = manifest(&counts);
        assert_eq!(m.len(), 1949);
        let (t, v) = stratified_split(&m, 0.9, 0).unwrap();
        assert!((1753..=1755).contains(&t.len()), "{}", t.len());
        assert!(t.len() >= lo && t.len() <= hi);
        assert_eq!(t.len() + v.len(), 1949);
        for (label, n) in counts {
            let k = t.class_counts.record_count(label);
            let exact = 0.9 * n as f64;
            assert!(k == exact.floor() as usize || k == exact.ceil() as usize);
        }
    }

    #[test]
    fn rejects_bad_ratio_and_empty() {
        let m = manifest(&[(RecordLabel::Normal, 3)]);
        assert!(matches!(stratified_split(&m, 1.0, 0), Err(Error::InvalidRatio(_))));
        assert!(matches!(stratified_split(&m, 0.0, 0), Err(Error::InvalidRatio(_))));
        let e = manifest(&[]);
        assert!(matches!(stratified_split(&e, 0.9, 0), Err(Error::EmptyManifest)));
    }

    proptest::proptest! {
        #[test]
        fn counts_are_conserved(
            a in 0usize..30, b in 0usize..30, c in 1usize..30,
            ratio in 0.05f64..0.95, seed in 0u64..1000,
        ) {
            let m = manifest(&[(RecordLabel::Normal, c), (RecordLabel::Cas, a), (RecordLabel::Das, b)]);
            let (t, v) = stratified_split(&m, ratio, seed).unwrap();
            for l in RecordLabel::ALL {
                proptest::prop_assert_eq!(
                    t.class_counts.record_count(l) + v.class_counts.record_count(l),
                    m.class_counts.record_count(l)
                );
            }
            for e in &t.entries {
                proptest::prop_assert!(!v.entries.iter().any(|x| x.audio == e.audio));
            }
        }
    }
}
