use nalgebra::{DMatrix, DVector};
use simplexflow::dynamics::Stability;
use simplexflow::games::{
    enumerate_nash, is_nash, logit_correspondence, CorrespondenceOptions, NashKind, DEFAULT_BETA_LADDER,
};
use simplexflow::protocols::PayoffSpec;
use simplexflow::SimplexPoint;

fn coordination() -> PayoffSpec {
    PayoffSpec::linear(DMatrix::identity(2, 2))
}

fn weighted_coordination() -> PayoffSpec {
    PayoffSpec::linear(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])))
}

#[test]
fn coordination_roots_near_pure_points_are_sinks() {
    let table = logit_correspondence(&coordination(), &[50.0], &CorrespondenceOptions::default()).unwrap();
    for e in [SimplexPoint::vertex(2, 0), SimplexPoint::vertex(2, 1)] {
        let row = table
            .rows
            .iter()
            .find(|r| r.root.distance(&e) < 0.05)
            .expect("root near the pure point");
        assert_eq!(row.classification, Stability::Sink);
    }
    assert!(table.contraction.iter().all(|c| c.sup_norm < 1.0));
}

#[test]
fn large_beta_roots_lie_near_nash_points() {
    for payoff in [coordination(), weighted_coordination()] {
        let table = logit_correspondence(&payoff, &[100.0], &CorrespondenceOptions::default()).unwrap();
        assert!(!table.rows.is_empty());
        assert_eq!(table.unmatched(), 0);
        assert!(table.rows.iter().all(|r| r.distance <= 0.1));
    }
}

#[test]
fn rock_paper_scissors_root_is_the_barycenter() {
    let table = logit_correspondence(
        &PayoffSpec::rock_paper_scissors(),
        &DEFAULT_BETA_LADDER,
        &CorrespondenceOptions::default(),
    )
    .unwrap();
    for beta in DEFAULT_BETA_LADDER {
        let rows: Vec<_> = table.rows_for(beta).collect();
        assert_eq!(rows.len(), 1, "beta = {beta}");
        assert!(rows[0].root.distance(&SimplexPoint::barycenter(3)) < 1e-10);
        assert_eq!(rows[0].nash_id, Some(0));
    }
}

#[test]
fn every_enumerated_point_is_nash() {
    let payoffs = [
        coordination(),
        weighted_coordination(),
        PayoffSpec::rock_paper_scissors(),
        PayoffSpec::linear(DMatrix::from_row_slice(
            4,
            4,
            &[0., 2., -1., 1., 1., 0., 3., -2., 2., -1., 0., 1., 0., 1., 2., 0.],
        )),
    ];
    for payoff in &payoffs {
        let e = enumerate_nash(payoff).unwrap();
        assert!(!e.points.is_empty());
        for p in &e.points {
            assert!(is_nash(payoff, &p.location, 1e-9).is_nash);
        }
    }
}

#[test]
fn fully_mixed_points_of_potential_games_are_critical() {
    for payoff in [coordination(), weighted_coordination()] {
        let e = enumerate_nash(&payoff).unwrap();
        for p in e.points.iter().filter(|p| p.kind == NashKind::FullyMixed) {
            let g = payoff.potential_gradient(p.location.coords()).unwrap();
            let tangent = &g - DVector::from_element(g.len(), g.mean());
            assert!(tangent.amax() <= 1e-6);
        }
    }
}

#[test]
fn unstable_dimension_matches_the_potential_index() {
    let table = logit_correspondence(&weighted_coordination(), &[25.0, 50.0, 100.0], &CorrespondenceOptions::default())
        .unwrap();
    // three pure, three edge and one interior Nash point
    assert_eq!(table.nash.len(), 7);
    for beta in [25.0, 50.0, 100.0] {
        assert_eq!(table.rows_for(beta).count(), 7, "beta = {beta}");
    }
    let checked: Vec<bool> = table.rows.iter().filter_map(|r| r.index_consistent).collect();
    assert_eq!(checked.len(), table.rows.len());
    assert!(checked.iter().all(|ok| *ok));
    let interior = table
        .rows
        .iter()
        .find(|r| r.beta == 100.0 && r.nash_id.is_some_and(|i| table.nash[i].kind == NashKind::FullyMixed))
        .unwrap();
    assert_eq!(interior.unstable_dim, 2);
}

#[test]
fn contraction_improves_with_beta() {
    let table = logit_correspondence(&coordination(), &[10.0, 50.0, 100.0], &CorrespondenceOptions::default()).unwrap();
    let sup = |beta: f64| {
        table
            .contraction
            .iter()
            .filter(|c| c.beta == beta)
            .map(|c| c.sup_norm)
            .fold(0.0, f64::max)
    };
    assert!(sup(100.0) < sup(50.0) && sup(50.0) < 1.0);
}

#[test]
fn tables_export() {
    let table = logit_correspondence(&coordination(), &[5.0, 50.0], &CorrespondenceOptions::default()).unwrap();
    let csv = table.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("beta,x1,x2,nash_id,distance,classification"));
    assert_eq!(lines.count(), table.rows.len());
    let json = table.to_json();
    assert_eq!(json["rows"].as_array().unwrap().len(), table.rows.len());
    assert_eq!(json["nash"].as_array().unwrap().len(), 3);
}
