use ipbc_core::data::{read_csv, write_csv};
use ipbc_core::{generate_blobs, run_session, static_pipeline, BlobSpec, PipelineParams};

#[test]
fn separated_blobs_are_recovered_without_feedback() {
    let ds = generate_blobs(&BlobSpec { n_per_cluster: 60, d: 6, k: 3, ..Default::default() }).unwrap();
    let run = static_pipeline(&ds, "blobs", &PipelineParams::default(), 0).unwrap();
    assert_eq!(run.clusters.k_found, 3);
    assert!(run.metrics.ari.unwrap() > 0.95, "{:?}", run.metrics);
    assert!(run.state.coords.iter().all(|v| v.is_finite()));
}

#[test]
fn csv_round_trip_feeds_a_session() {
    let ds = generate_blobs(&BlobSpec { n_per_cluster: 30, d: 4, k: 3, seed: 9, ..Default::default() }).unwrap();
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), Some("label")).unwrap();
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.feature_names(), ds.feature_names());

    let mut params = PipelineParams::default();
    params.optimizer.epochs = 60;
    let report = run_session(&back, "round-trip", 2, &params, 1).unwrap();
    assert_eq!(report.rounds.len(), 3);
    assert_eq!(report.constraints.len(), 2 * (params.n_ml + params.n_cl));
    assert!(report.explanations.iter().all(|e| !e.top_features.is_empty()));
}
