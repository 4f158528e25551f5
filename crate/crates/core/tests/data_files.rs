use leaky_rbm::data::{ingest, read_matrix, write_matrix, DataFormat, Dataset, Normalization};
use leaky_rbm::model_file::ModelFile;
use leaky_rbm::rng::stream;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

fn sample_matrix(rows: usize) -> DMatrix<f64> {
    let mut rng = stream(1, 0);
    DMatrix::from_fn(rows, 3, |_, c| match c {
        0 => 3.0 + 2.0 * rng.sample::<f64, _>(StandardNormal),
        1 => 7.5,
        _ => rng.random_range(-1.0..1.0),
    })
}

#[test]
fn shifted_scaled_gaussian_column_is_standardized() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    write_matrix(&path, &sample_matrix(5000), DataFormat::Csv).unwrap();
    let ds = ingest(&path, DataFormat::Csv).unwrap();
    let n = ds.num_rows() as f64;
    let col: Vec<f64> = ds.matrix.column(0).iter().copied().collect();
    let mean = col.iter().sum::<f64>() / n;
    let std = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-6);
    assert!((std - 1.0).abs() < 1e-6);
    assert!(ds.matrix.column(1).iter().all(|&x| x == 0.0));
    assert_eq!(ds.normalization.per_column_std[1], 1.0);
}

#[test]
fn stored_statistics_reproduce_the_normalized_data() {
    let dir = tempfile::tempdir().unwrap();
    for format in [DataFormat::RawF32, DataFormat::Csv] {
        let path = dir.path().join("d.bin");
        write_matrix(&path, &sample_matrix(300), format).unwrap();
        let ds = ingest(&path, format).unwrap();
        let stats = dir.path().join("norm.csv");
        ds.normalization.save(&stats).unwrap();
        let again = Dataset::with_normalization(read_matrix(&path, format).unwrap(), Normalization::load(&stats).unwrap()).unwrap();
        assert!((&again.matrix - &ds.matrix).amax() < 1e-6);
        let mut back = ds.matrix.clone();
        ds.normalization.invert(&mut back);
        assert!((back - read_matrix(&path, format).unwrap()).amax() < 1e-6);
    }
}

#[test]
fn raw_files_round_trip_at_f32_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.f32");
    let m = sample_matrix(40);
    write_matrix(&path, &m, DataFormat::RawF32).unwrap();
    let back = read_matrix(&path, DataFormat::RawF32).unwrap();
    assert_eq!(back, m.map(|x| x as f32 as f64));
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"LRBD");
    assert_eq!(bytes.len(), 12 + 40 * 3 * 4);
}

#[test]
fn missing_files_name_the_path() {
    let err = ModelFile::load(std::path::Path::new("/nonexistent/model.rbm")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/model.rbm"));
    let err = ingest(std::path::Path::new("/nonexistent/data.csv"), DataFormat::Csv).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/data.csv"));
}
