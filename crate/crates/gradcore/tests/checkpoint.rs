use gradcore::{load_checkpoint, save_checkpoint, ParamStore, Tensor};

#[test]
fn file_round_trip_keeps_order_and_bits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    let mut p = ParamStore::new();
    p.insert("z.last", Tensor::new(vec![3], vec![f64::MIN_POSITIVE, -0.0, f64::NAN]).unwrap());
    p.insert("a.first", Tensor::new(vec![2, 2], vec![1.0, -2.5, 1e300, 3.0]).unwrap());
    save_checkpoint(&p, &path).unwrap();
    let q = load_checkpoint(&path).unwrap();
    assert_eq!(q.names().collect::<Vec<_>>(), ["z.last", "a.first"]);
    for name in p.names() {
        let (a, b) = (p.get(name).unwrap(), q.get(name).unwrap());
        assert_eq!(a.shape(), b.shape());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn missing_and_truncated_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_checkpoint(dir.path().join("absent.ckpt")).is_err());
    let path = dir.path().join("short.ckpt");
    std::fs::write(&path, b"GRADCKPT\x01\x00").unwrap();
    assert!(load_checkpoint(&path).is_err());
}
