use std::fs;
use std::path::Path;

use veinatn::protocol::{build_protocol, scan_dataset, DatasetKind};

/// `identities` directories of `sessions` sessions with `per_session`
/// empty image files each.
fn mock_tree(root: &Path, identities: usize, sessions: usize, per_session: usize) {
    for i in 0..identities {
        for s in 0..sessions {
            let dir = root.join(format!("{i:03}")).join(format!("s{}", s + 1));
            fs::create_dir_all(&dir).unwrap();
            for k in 0..per_session {
                fs::write(dir.join(format!("{k:02}.png")), b"").unwrap();
            }
        }
    }
}

fn counts(identities: usize, sessions: usize, per_session: usize, kind: DatasetKind) -> (usize, usize) {
    let dir = tempfile::tempdir().unwrap();
    mock_tree(dir.path(), identities, sessions, per_session);
    build_protocol(dir.path(), kind).unwrap().score_counts()
}

#[test]
fn three_hundred_identity_protocol_counts() {
    assert_eq!(counts(300, 1, 92, DatasetKind::Fv300), (3000, 897_000));
}

#[test]
fn two_session_protocol_counts() {
    assert_eq!(counts(492, 2, 6, DatasetKind::Sessions), (2952, 1_449_432));
    assert_eq!(counts(312, 2, 6, DatasetKind::Sessions), (1872, 582_192));
}

#[test]
fn split_holds_out_the_last_samples_of_each_identity() {
    let dir = tempfile::tempdir().unwrap();
    mock_tree(dir.path(), 4, 1, 10);
    let p = build_protocol(dir.path(), "split:6,2,2".parse().unwrap()).unwrap();
    assert_eq!((p.train.len(), p.val.len(), p.test.len()), (24, 8, 8));
    assert_eq!(p.score_counts(), (8, 24));
    assert!(p.test.iter().all(|s| s.path.ends_with("08.png") || s.path.ends_with("09.png")));
    assert_eq!(p.test[2].identity, 1);
}

#[test]
fn hidden_entries_and_non_images_are_ignored() {
    let dir = tempfile::tempdir().unwrap();
    mock_tree(dir.path(), 2, 1, 3);
    fs::write(dir.path().join("README.txt"), b"x").unwrap();
    fs::create_dir_all(dir.path().join(".cache/s1")).unwrap();
    fs::write(dir.path().join("000/s1/notes.txt"), b"x").unwrap();
    fs::write(dir.path().join("000/s1/.hidden.png"), b"x").unwrap();
    let listing = scan_dataset(dir.path()).unwrap();
    assert_eq!(listing.len(), 2);
    assert_eq!(listing[0].sessions[0].1, ["00.png", "01.png", "02.png"]);
}

#[test]
fn malformed_trees_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(scan_dataset(dir.path()).is_err());
    mock_tree(dir.path(), 2, 1, 3);
    fs::write(dir.path().join("001/stray.png"), b"").unwrap();
    assert!(scan_dataset(dir.path()).is_err());

    let dir = tempfile::tempdir().unwrap();
    mock_tree(dir.path(), 3, 1, 12);
    let err = build_protocol(dir.path(), "split:6,2,3".parse().unwrap()).unwrap_err().to_string();
    assert!(err.contains("000") && err.contains("12"), "{err}");
    let err = build_protocol(dir.path(), DatasetKind::Sessions).unwrap_err().to_string();
    assert!(err.contains("000"), "{err}");
}
