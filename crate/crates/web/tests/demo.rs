use uflst_web::{check_gradients, cluster_points, train_rounds, ClusterRequest, TrainRequest};

#[test]
fn default_blobs_are_recovered() {
    let r = cluster_points(&ClusterRequest::default()).unwrap();
    assert_eq!(r.points.len(), 200);
    assert_eq!(r.labels.len(), 200);
    assert_eq!(r.clusters, 5, "{r:?}");
    assert!(r.nmi.unwrap() > 0.95, "{r:?}");
    let noise = r.labels.iter().filter(|&&l| l < 0).count();
    assert_eq!(noise, r.outliers);
    assert!(r.epsilon > 0.0 && r.epsilon <= 1.0);
}

#[test]
fn overlapping_blobs_merge() {
    let req = ClusterRequest { separation: 0.0, ..Default::default() };
    let r = cluster_points(&req).unwrap();
    assert!(r.clusters < 5 || r.nmi.unwrap_or(0.0) < 0.5, "{r:?}");
}

#[test]
fn bad_cluster_parameters_are_reported() {
    let req = ClusterRequest { k: 0, ..Default::default() };
    assert!(cluster_points(&req).is_err());
}

#[test]
fn a_short_run_reports_every_round() {
    let req = TrainRequest { rounds: 2, classes: 10, ..Default::default() };
    let r = train_rounds(&req).unwrap();
    assert_eq!(r.rounds.len(), 2);
    assert!(r.untrained_accuracy > 0.0 && r.untrained_accuracy <= 1.0);
    for (i, row) in r.rounds.iter().enumerate() {
        assert_eq!(row.round, i + 1);
        assert!(row.accuracy.is_some());
    }
}

#[test]
fn unknown_loss_and_round_count_are_rejected() {
    let req = TrainRequest { loss: "contrastive".into(), ..Default::default() };
    assert!(train_rounds(&req).unwrap_err().contains("contrastive"));
    let req = TrainRequest { rounds: 0, ..Default::default() };
    assert!(train_rounds(&req).is_err());
}

#[test]
fn gradients_check_out() {
    let rows = check_gradients(3, 1).unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row.max_rel_error < 1e-4, "{} {}", row.name, row.max_rel_error);
    }
}

#[test]
fn json_entry_points_round_trip() {
    let out = uflst_web::cluster(r#"{"classes": 3, "seed": 2}"#).unwrap();
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["points"].as_array().unwrap().len(), 120);
    let out = uflst_web::gradcheck(1, 0).unwrap();
    assert!(out.contains("triplet_hinge"));
}
